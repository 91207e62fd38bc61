//! Small feed-forward network with per-layer training roles, hand-written
//! backpropagation, and plain minibatch SGD.
//!
//! Activations are `batch × dim` matrices. Conv1d layers store each sample
//! channel-major: entry `c * len + p` is channel `c` at position `p`.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

/// Floor applied to probabilities before taking the log in cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Frozen,
    Finetune,
    Adapt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum LayerKind {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        width: usize,
        stride: usize,
        /// Input length per channel.
        in_len: usize,
    },
    Relu,
    Softmax,
}

impl LayerKind {
    pub fn is_parametric(&self) -> bool {
        matches!(self, LayerKind::Dense { .. } | LayerKind::Conv1d { .. })
    }

    pub fn conv_out_len(in_len: usize, width: usize, stride: usize) -> usize {
        (in_len - width) / stride + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub role: Role,
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize, role: Role) -> Self {
        Self {
            kind: LayerKind::Dense { inputs, outputs },
            role,
        }
    }

    pub fn conv1d(in_channels: usize, out_channels: usize, width: usize, stride: usize, in_len: usize, role: Role) -> Self {
        Self {
            kind: LayerKind::Conv1d {
                in_channels,
                out_channels,
                width,
                stride,
                in_len,
            },
            role,
        }
    }

    pub fn relu() -> Self {
        Self {
            kind: LayerKind::Relu,
            role: Role::Finetune,
        }
    }

    pub fn softmax() -> Self {
        Self {
            kind: LayerKind::Softmax,
            role: Role::Finetune,
        }
    }
}

/// Desk-scale default: two strided conv1d layers feeding three dense layers.
///
/// Convs are `finetune`, the three dense layers are `adapt`. Layer indices
/// of the dense outputs are 4, 6 and 8.
pub fn default_architecture(input_len: usize, classes: usize) -> Vec<LayerSpec> {
    let l1 = LayerKind::conv_out_len(input_len, 5, 2);
    let l2 = LayerKind::conv_out_len(l1, 5, 2);
    vec![
        LayerSpec::conv1d(1, 8, 5, 2, input_len, Role::Finetune),
        LayerSpec::relu(),
        LayerSpec::conv1d(8, 8, 5, 2, l1, Role::Finetune),
        LayerSpec::relu(),
        LayerSpec::dense(8 * l2, 64, Role::Adapt),
        LayerSpec::relu(),
        LayerSpec::dense(64, 32, Role::Adapt),
        LayerSpec::relu(),
        LayerSpec::dense(32, classes, Role::Adapt),
        LayerSpec::softmax(),
    ]
}

/// Weights (`outputs × fan_in`) and biases of one parametric layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Params {
    fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    specs: Vec<LayerSpec>,
    /// One entry per layer; `Some` exactly for parametric layers.
    params: Vec<Option<Params>>,
    dims: Vec<usize>,
    input_dim: usize,
}

/// Outputs of every layer for one forward pass.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    pub input: Array2<f64>,
    pub outputs: Vec<Array2<f64>>,
}

impl ActivationTrace {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("trace is never empty")
    }

    pub fn layer(&self, index: usize) -> &Array2<f64> {
        &self.outputs[index]
    }
}

/// Parameter gradients, aligned with the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<Params>>,
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a, b) {
                a.weight += &b.weight;
                a.bias += &b.bias;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flatten().all(Params::is_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .flat_map(|p| p.weight.iter().chain(p.bias.iter()))
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

/// Per-role learning-rate multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoleMultipliers {
    pub frozen: f64,
    pub finetune: f64,
    pub adapt: f64,
}

impl Default for RoleMultipliers {
    fn default() -> Self {
        Self {
            frozen: 0.0,
            finetune: 1.0,
            adapt: 10.0,
        }
    }
}

impl RoleMultipliers {
    pub fn get(&self, role: Role) -> f64 {
        match role {
            Role::Frozen => self.frozen,
            Role::Finetune => self.finetune,
            Role::Adapt => self.adapt,
        }
    }
}

fn validate_specs(specs: &[LayerSpec]) -> Result<(usize, Vec<usize>)> {
    let first = specs.first().ok_or_else(|| Error::InvalidSpec("empty layer list".into()))?;
    let input_dim = match first.kind {
        LayerKind::Dense { inputs, .. } => inputs,
        LayerKind::Conv1d {
            in_channels, in_len, ..
        } => in_channels * in_len,
        _ => return Err(Error::InvalidSpec("first layer must be dense or conv1d".into())),
    };
    let mut dims = Vec::with_capacity(specs.len());
    let mut current = input_dim;
    for (i, spec) in specs.iter().enumerate() {
        current = match spec.kind {
            LayerKind::Dense { inputs, outputs } => {
                if inputs != current || inputs == 0 || outputs == 0 {
                    return Err(Error::InvalidSpec(format!(
                        "layer {i}: dense expects {inputs} inputs, previous layer gives {current}"
                    )));
                }
                outputs
            }
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                width,
                stride,
                in_len,
            } => {
                if in_channels * in_len != current {
                    return Err(Error::InvalidSpec(format!(
                        "layer {i}: conv1d expects {} inputs, previous layer gives {current}",
                        in_channels * in_len
                    )));
                }
                if width == 0 || stride == 0 || width > in_len || out_channels == 0 || in_channels == 0 {
                    return Err(Error::InvalidSpec(format!("layer {i}: bad conv1d geometry")));
                }
                out_channels * LayerKind::conv_out_len(in_len, width, stride)
            }
            LayerKind::Relu => current,
            LayerKind::Softmax => {
                if i + 1 != specs.len() {
                    return Err(Error::InvalidSpec("softmax must be the final layer".into()));
                }
                current
            }
        };
        dims.push(current);
    }
    // Adapt-role parametric layers must form a contiguous suffix.
    let roles: Vec<Role> = specs
        .iter()
        .filter(|s| s.kind.is_parametric())
        .map(|s| s.role)
        .collect();
    if let Some(first_adapt) = roles.iter().position(|r| *r == Role::Adapt) {
        if roles[first_adapt..].iter().any(|r| *r != Role::Adapt) {
            return Err(Error::InvalidSpec(
                "adapt-role layers must be a contiguous suffix of the parametric layers".into(),
            ));
        }
    }
    Ok((input_dim, dims))
}

fn fan_in(kind: &LayerKind) -> usize {
    match *kind {
        LayerKind::Dense { inputs, .. } => inputs,
        LayerKind::Conv1d { in_channels, width, .. } => in_channels * width,
        _ => 0,
    }
}

fn fan_out(kind: &LayerKind) -> usize {
    match *kind {
        LayerKind::Dense { outputs, .. } => outputs,
        LayerKind::Conv1d { out_channels, .. } => out_channels,
        _ => 0,
    }
}

/// Uniform fan-based initialization, `w ~ U(−a, a)` with `a = √(6/(fan_in + fan_out))`.
pub fn init_network(specs: &[LayerSpec], seed: u64) -> Result<Network> {
    let (input_dim, dims) = validate_specs(specs)?;
    let mut rng = rng::seeded(seed);
    let params = specs
        .iter()
        .map(|spec| {
            if !spec.kind.is_parametric() {
                return None;
            }
            let (fi, fo) = (fan_in(&spec.kind), fan_out(&spec.kind));
            let a = (6.0 / (fi + fo) as f64).sqrt();
            let weight = Array2::from_shape_simple_fn((fo, fi), || rng.random_range(-a..a));
            Some(Params {
                weight,
                bias: Array1::zeros(fo),
            })
        })
        .collect();
    Ok(Network {
        specs: specs.to_vec(),
        params,
        dims,
        input_dim,
    })
}

impl Network {
    /// Assemble a network from specs and explicit parameters.
    pub fn from_parts(specs: Vec<LayerSpec>, params: Vec<Option<Params>>) -> Result<Network> {
        let (input_dim, dims) = validate_specs(&specs)?;
        if params.len() != specs.len() {
            return Err(Error::InvalidSpec("one parameter slot per layer required".into()));
        }
        for (i, (spec, p)) in specs.iter().zip(&params).enumerate() {
            match (spec.kind.is_parametric(), p) {
                (true, Some(p)) => {
                    let want = (fan_out(&spec.kind), fan_in(&spec.kind));
                    if p.weight.dim() != want || p.bias.len() != want.0 {
                        return Err(Error::InvalidSpec(format!("layer {i}: parameter shape mismatch")));
                    }
                }
                (false, None) => {}
                _ => return Err(Error::InvalidSpec(format!("layer {i}: parameter presence mismatch"))),
            }
        }
        Ok(Network {
            specs,
            params,
            dims,
            input_dim,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Option<Params>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Option<Params>] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty")
    }

    pub fn layer_dim(&self, index: usize) -> usize {
        self.dims[index]
    }

    pub fn num_layers(&self) -> usize {
        self.specs.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().flatten().all(Params::is_finite)
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self.params.iter().map(|p| p.as_ref().map(Params::zeros_like)).collect(),
        }
    }
}

fn dense_forward(x: ArrayView2<'_, f64>, p: &Params) -> Array2<f64> {
    let mut out = x.dot(&p.weight.t());
    out += &p.bias;
    out
}

fn conv_forward(x: ArrayView2<'_, f64>, p: &Params, kind: &LayerKind) -> Array2<f64> {
    let LayerKind::Conv1d {
        in_channels,
        out_channels,
        width,
        stride,
        in_len,
    } = *kind
    else {
        unreachable!()
    };
    let out_len = LayerKind::conv_out_len(in_len, width, stride);
    let batch = x.nrows();
    let mut out = Array2::<f64>::zeros((batch, out_channels * out_len));
    let w = p.weight.as_slice().expect("standard layout");
    for (b, xb) in x.outer_iter().enumerate() {
        let xb = xb.to_vec();
        let mut ob = out.row_mut(b);
        for o in 0..out_channels {
            let wo = &w[o * in_channels * width..(o + 1) * in_channels * width];
            for pos in 0..out_len {
                let mut acc = p.bias[o];
                for c in 0..in_channels {
                    let base = c * in_len + pos * stride;
                    let wc = &wo[c * width..(c + 1) * width];
                    for k in 0..width {
                        acc += wc[k] * xb[base + k];
                    }
                }
                ob[o * out_len + pos] = acc;
            }
        }
    }
    out
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.outer_iter_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s: f64 = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Forward pass recording every layer's output.
pub fn forward(net: &Network, batch: ArrayView2<'_, f64>) -> Result<ActivationTrace> {
    if batch.ncols() != net.input_dim {
        return Err(invalid(format!(
            "batch has {} columns, network expects {}",
            batch.ncols(),
            net.input_dim
        )));
    }
    let input = batch.as_standard_layout().to_owned();
    let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(net.specs.len());
    for (i, spec) in net.specs.iter().enumerate() {
        let x = if i == 0 { input.view() } else { outputs[i - 1].view() };
        let y = match spec.kind {
            LayerKind::Dense { .. } => dense_forward(x, net.params[i].as_ref().expect("parametric")),
            LayerKind::Conv1d { .. } => conv_forward(x, net.params[i].as_ref().expect("parametric"), &spec.kind),
            LayerKind::Relu => x.mapv(|v| v.max(0.0)),
            LayerKind::Softmax => softmax_rows(&x.to_owned()),
        };
        outputs.push(y);
    }
    Ok(ActivationTrace { input, outputs })
}

/// Mean over the batch of `−log max(p[y], 1e-12)`.
pub fn cross_entropy(probs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    if probs.nrows() != labels.len() {
        return Err(invalid(format!(
            "{} probability rows but {} labels",
            probs.nrows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(invalid("empty batch"));
    }
    let k = probs.ncols();
    let mut total = 0.0;
    for (row, &y) in probs.outer_iter().zip(labels) {
        if y >= k {
            return Err(invalid(format!("label {y} out of range for {k} classes")));
        }
        total -= row[y].max(PROB_FLOOR).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Gradient of [`cross_entropy`] with respect to the probabilities.
pub fn cross_entropy_grad(probs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<Array2<f64>> {
    cross_entropy(probs, labels)?;
    let n = labels.len() as f64;
    let mut g = Array2::<f64>::zeros(probs.raw_dim());
    for (i, &y) in labels.iter().enumerate() {
        let p = probs[[i, y]];
        if p > PROB_FLOOR {
            g[[i, y]] = -1.0 / (n * p);
        }
    }
    Ok(g)
}

/// Backpropagate from the network output, optionally injecting extra
/// gradients at the outputs of chosen layers.
///
/// `extra` holds `(layer index, ∂L/∂output_l)` pairs; each is added to the
/// gradient flowing into that layer's output. Gradients are returned for
/// every parametric layer, whatever its role.
pub fn backward(
    net: &Network,
    trace: &ActivationTrace,
    output_grad: ArrayView2<'_, f64>,
    extra: &[(usize, ArrayView2<'_, f64>)],
) -> Result<Gradients> {
    let n_layers = net.specs.len();
    if trace.outputs.len() != n_layers {
        return Err(invalid("trace does not belong to this network"));
    }
    if output_grad.dim() != trace.output().dim() {
        return Err(invalid(format!(
            "output gradient shape {:?} does not match output {:?}",
            output_grad.dim(),
            trace.output().dim()
        )));
    }
    for (l, g) in extra {
        if *l >= n_layers || g.dim() != trace.outputs[*l].dim() {
            return Err(invalid(format!("injected gradient for layer {l} has the wrong shape")));
        }
    }
    let mut grads = net.zero_gradients();
    let mut g = output_grad.to_owned();
    for l in (0..n_layers).rev() {
        for (el, eg) in extra {
            if *el == l {
                g += eg;
            }
        }
        let x = if l == 0 { trace.input.view() } else { trace.outputs[l - 1].view() };
        let y = &trace.outputs[l];
        let spec = &net.specs[l];
        g = match spec.kind {
            LayerKind::Softmax => {
                let mut dz = Array2::<f64>::zeros(g.raw_dim());
                for ((gr, pr), mut dr) in g.outer_iter().zip(y.outer_iter()).zip(dz.outer_iter_mut()) {
                    let dot: f64 = gr.iter().zip(pr.iter()).map(|(a, b)| a * b).sum();
                    for k in 0..gr.len() {
                        dr[k] = pr[k] * (gr[k] - dot);
                    }
                }
                dz
            }
            LayerKind::Relu => {
                let mut dz = g;
                dz.zip_mut_with(y, |d, &o| {
                    if o <= 0.0 {
                        *d = 0.0;
                    }
                });
                dz
            }
            LayerKind::Dense { .. } => {
                let p = net.params[l].as_ref().expect("parametric");
                let gp = grads.layers[l].as_mut().expect("parametric");
                gp.weight = g.t().dot(&x);
                gp.bias = g.sum_axis(Axis(0));
                if l == 0 {
                    break;
                }
                g.dot(&p.weight)
            }
            LayerKind::Conv1d { .. } => {
                let p = net.params[l].as_ref().expect("parametric");
                let gp = grads.layers[l].as_mut().expect("parametric");
                let dx = conv_backward(x, &g, p, gp, &spec.kind, l > 0);
                if l == 0 {
                    break;
                }
                dx
            }
        };
    }
    Ok(grads)
}

fn conv_backward(
    x: ArrayView2<'_, f64>,
    g: &Array2<f64>,
    p: &Params,
    gp: &mut Params,
    kind: &LayerKind,
    need_input_grad: bool,
) -> Array2<f64> {
    let LayerKind::Conv1d {
        in_channels,
        out_channels,
        width,
        stride,
        in_len,
    } = *kind
    else {
        unreachable!()
    };
    let out_len = LayerKind::conv_out_len(in_len, width, stride);
    let w = p.weight.as_slice().expect("standard layout");
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; out_channels];
    let mut dx = Array2::<f64>::zeros(if need_input_grad { x.dim() } else { (0, 0) });
    for (b, xb) in x.outer_iter().enumerate() {
        let xb = xb.to_vec();
        let gb = g.row(b);
        let mut dxb = vec![0.0; if need_input_grad { xb.len() } else { 0 }];
        for o in 0..out_channels {
            let base_w = o * in_channels * width;
            for pos in 0..out_len {
                let go = gb[o * out_len + pos];
                if go == 0.0 {
                    continue;
                }
                db[o] += go;
                for c in 0..in_channels {
                    let base_x = c * in_len + pos * stride;
                    let off = base_w + c * width;
                    for k in 0..width {
                        dw[off + k] += go * xb[base_x + k];
                        if need_input_grad {
                            dxb[base_x + k] += go * w[off + k];
                        }
                    }
                }
            }
        }
        if need_input_grad {
            dx.row_mut(b).iter_mut().zip(&dxb).for_each(|(d, v)| *d = *v);
        }
    }
    gp.weight = Array2::from_shape_vec(p.weight.raw_dim(), dw).expect("same shape");
    gp.bias = Array1::from(db);
    dx
}

/// `W ← W − base_lr · multiplier(role) · ∇W`; layers with a zero effective
/// rate are left bitwise untouched.
pub fn sgd_step(net: &mut Network, grads: &Gradients, base_lr: f64, roles: &RoleMultipliers) -> Result<()> {
    if !(base_lr >= 0.0 && base_lr.is_finite()) {
        return Err(invalid(format!("learning rate must be non-negative, got {base_lr}")));
    }
    if grads.layers.len() != net.params.len() {
        return Err(invalid("gradient does not match network"));
    }
    for (l, (p, g)) in net.params.iter_mut().zip(&grads.layers).enumerate() {
        let (Some(p), Some(g)) = (p, g) else {
            continue;
        };
        if p.weight.dim() != g.weight.dim() || p.bias.dim() != g.bias.dim() {
            return Err(invalid(format!("layer {l}: gradient shape mismatch")));
        }
        let mult = roles.get(net.specs[l].role);
        if mult < 0.0 {
            return Err(invalid("role multipliers must be non-negative"));
        }
        let lr = base_lr * mult;
        if lr == 0.0 {
            continue;
        }
        p.weight.scaled_add(-lr, &g.weight);
        p.bias.scaled_add(-lr, &g.bias);
    }
    Ok(())
}

/// Class probabilities for a batch (final trace row).
pub fn predict(net: &Network, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    Ok(forward(net, batch)?.outputs.pop().expect("non-empty"))
}

/// Row-wise argmax.
pub fn argmax_rows(probs: ArrayView2<'_, f64>) -> Vec<usize> {
    probs
        .outer_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}
