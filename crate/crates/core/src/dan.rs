//! Joint objective: source cross-entropy plus λ-weighted MK-MMD between the
//! source and target activations of every adapt layer in `[l₁, l₂]`,
//! minimized by minibatch SGD.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel_mmd::{self, KernelBank, SampleSet};
use crate::net::{self, Network, Role, RoleMultipliers};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BankPolicy {
    /// One bank for every layer and step.
    Fixed { bank: KernelBank },
    /// Median-heuristic ladder on the pooled layer activations, every step.
    MedianPerBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DanConfig {
    pub lambda: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub base_lr: f64,
    pub role_multipliers: RoleMultipliers,
    /// Inclusive layer-index range `[l₁, l₂]`; MMD is taken on the output of
    /// every adapt-role parametric layer inside it.
    pub adapt_layers: (usize, usize),
    pub bank_policy: BankPolicy,
    pub seed: u64,
}

impl Default for DanConfig {
    fn default() -> Self {
        Self {
            lambda: 0.3,
            batch_size: 32,
            steps: 2000,
            base_lr: 0.005,
            role_multipliers: RoleMultipliers::default(),
            adapt_layers: (4, 8),
            bank_policy: BankPolicy::MedianPerBatch,
            seed: 0,
        }
    }
}

impl DanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if self.batch_size < 2 {
            return Err(invalid("batch_size must be at least 2"));
        }
        if self.adapt_layers.0 > self.adapt_layers.1 {
            return Err(invalid("adapt layer range must satisfy l1 ≤ l2"));
        }
        Ok(())
    }
}

/// Labeled inputs: one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
}

impl LabeledData {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(invalid("inputs and labels differ in length"));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn select(&self, idx: &[usize]) -> (Array2<f64>, Vec<usize>) {
        (
            self.inputs.select(Axis(0), idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Layers whose outputs enter the regularizer.
pub fn adapt_layer_indices(net: &Network, cfg: &DanConfig) -> Result<Vec<usize>> {
    let (l1, l2) = cfg.adapt_layers;
    let specs = net.specs();
    let is_adapt = |l: usize| l < specs.len() && specs[l].kind.is_parametric() && specs[l].role == Role::Adapt;
    if !is_adapt(l1) || !is_adapt(l2) || l1 > l2 {
        return Err(invalid(format!(
            "adapt range [{l1}, {l2}] must start and end on adapt-role parametric layers"
        )));
    }
    Ok((l1..=l2).filter(|&l| is_adapt(l)).collect())
}

/// Kernel banks remembered across steps, for layers whose pooled batch
/// turns out degenerate.
#[derive(Debug, Clone, Default)]
pub struct BankMemory {
    last: BTreeMap<usize, KernelBank>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    /// `(layer index, MMD²)` in ascending layer order.
    pub mmd: Vec<(usize, f64)>,
    /// Layers that fell back to a remembered (or unit) bank.
    pub fallback_layers: Vec<usize>,
}

impl LossBreakdown {
    pub fn mmd_total(&self) -> f64 {
        self.mmd.iter().map(|(_, v)| v).sum()
    }
}

fn layer_bank(
    policy: &BankPolicy,
    layer: usize,
    pooled: &SampleSet,
    memory: &mut BankMemory,
) -> Result<(KernelBank, bool)> {
    match policy {
        BankPolicy::Fixed { bank } => Ok((bank.clone(), false)),
        BankPolicy::MedianPerBatch => match kernel_mmd::default_bank(pooled) {
            Ok(bank) => {
                memory.last.insert(layer, bank.clone());
                Ok((bank, false))
            }
            Err(Error::DegenerateSample(_)) => {
                let bank = match memory.last.get(&layer) {
                    Some(b) => b.clone(),
                    None => KernelBank::single(1.0)?,
                };
                Ok((bank, true))
            }
            Err(e) => Err(e),
        },
    }
}

struct Evaluated {
    breakdown: LossBreakdown,
    source_trace: net::ActivationTrace,
    target_trace: net::ActivationTrace,
    /// `(layer, ∂ΣMMD/∂source_l, ∂ΣMMD/∂target_l)`
    mmd_grads: Vec<(usize, Array2<f64>, Array2<f64>)>,
}

fn evaluate(
    net: &Network,
    source_x: ArrayView2<'_, f64>,
    source_y: &[usize],
    target_x: ArrayView2<'_, f64>,
    cfg: &DanConfig,
    memory: &mut BankMemory,
    with_grads: bool,
    step: usize,
) -> Result<Evaluated> {
    if source_x.nrows() == 0 || target_x.nrows() == 0 {
        return Err(invalid("source and target batches must be non-empty"));
    }
    if source_x.ncols() != target_x.ncols() {
        return Err(invalid("source and target feature dimensions differ"));
    }
    let layers = adapt_layer_indices(net, cfg)?;
    let source_trace = net::forward(net, source_x)?;
    let target_trace = net::forward(net, target_x)?;
    let finite = |t: &net::ActivationTrace| t.outputs.iter().all(|o| o.iter().all(|v| v.is_finite()));
    if !finite(&source_trace) || !finite(&target_trace) {
        return Err(Error::DivergedTraining {
            step,
            reason: "non-finite activations".into(),
        });
    }
    let ce = net::cross_entropy(source_trace.output().view(), source_y)?;
    let mut mmd = Vec::with_capacity(layers.len());
    let mut fallback_layers = Vec::new();
    let mut mmd_grads = Vec::new();
    for &l in &layers {
        let s = SampleSet::new(source_trace.layer(l).clone())?;
        let t = SampleSet::new(target_trace.layer(l).clone())?;
        let (bank, fell_back) = layer_bank(&cfg.bank_policy, l, &s.pooled(&t)?, memory)?;
        if fell_back {
            fallback_layers.push(l);
        }
        if with_grads {
            let g = kernel_mmd::mmd2_biased_grad(&s, &t, &bank)?;
            mmd.push((l, g.value));
            mmd_grads.push((l, g.source, g.target));
        } else {
            mmd.push((l, kernel_mmd::mmd2_biased(&s, &t, &bank)?));
        }
    }
    let mmd_sum: f64 = mmd.iter().map(|(_, v)| v).sum();
    Ok(Evaluated {
        breakdown: LossBreakdown {
            total: ce + cfg.lambda * mmd_sum,
            ce,
            mmd,
            fallback_layers,
        },
        source_trace,
        target_trace,
        mmd_grads,
    })
}

/// `CE(source) + λ Σ_l MMD²_biased(source_l, target_l)`.
pub fn dan_loss(
    net: &Network,
    source_x: ArrayView2<'_, f64>,
    source_y: &[usize],
    target_x: ArrayView2<'_, f64>,
    cfg: &DanConfig,
    memory: &mut BankMemory,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    Ok(evaluate(net, source_x, source_y, target_x, cfg, memory, false, 0)?.breakdown)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub ce: f64,
    pub mmd_per_layer: Vec<f64>,
    pub mmd_total: f64,
    pub total: f64,
    pub fallback_layers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub lambda: f64,
    pub layers: Vec<usize>,
    pub records: Vec<StepRecord>,
}

impl TrainHistory {
    /// CSV with columns `step, ce, mmd_total, mmd_l<i>…, total_loss`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,ce,mmd_total");
        for l in &self.layers {
            let _ = write!(out, ",mmd_l{l}");
        }
        out.push_str(",total_loss\n");
        for r in &self.records {
            let _ = write!(out, "{},{},{}", r.step, r.ce, r.mmd_total);
            for v in &r.mmd_per_layer {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{}", r.total);
        }
        out
    }
}

/// One joint SGD step. The CE gradient flows through the source path; the
/// regularizer gradient is injected at every adapt layer of both paths.
pub fn dan_step(
    net: &mut Network,
    source_x: ArrayView2<'_, f64>,
    source_y: &[usize],
    target_x: ArrayView2<'_, f64>,
    cfg: &DanConfig,
    memory: &mut BankMemory,
    step: usize,
) -> Result<StepRecord> {
    cfg.validate()?;
    let regularize = cfg.lambda > 0.0;
    let ev = evaluate(net, source_x, source_y, target_x, cfg, memory, regularize, step)?;
    let og = net::cross_entropy_grad(ev.source_trace.output().view(), source_y)?;
    let grads = if regularize {
        let src: Vec<Array2<f64>> = ev.mmd_grads.iter().map(|(_, s, _)| s * cfg.lambda).collect();
        let tgt: Vec<Array2<f64>> = ev.mmd_grads.iter().map(|(_, _, t)| t * cfg.lambda).collect();
        let src_inject: Vec<(usize, ArrayView2<'_, f64>)> =
            ev.mmd_grads.iter().zip(&src).map(|((l, _, _), g)| (*l, g.view())).collect();
        let tgt_inject: Vec<(usize, ArrayView2<'_, f64>)> =
            ev.mmd_grads.iter().zip(&tgt).map(|((l, _, _), g)| (*l, g.view())).collect();
        let mut g = net::backward(net, &ev.source_trace, og.view(), &src_inject)?;
        let zero = Array2::zeros(ev.target_trace.output().raw_dim());
        g.add_assign(&net::backward(net, &ev.target_trace, zero.view(), &tgt_inject)?);
        g
    } else {
        net::backward(net, &ev.source_trace, og.view(), &[])?
    };
    if !grads.is_finite() {
        return Err(Error::DivergedTraining {
            step,
            reason: "non-finite gradient".into(),
        });
    }
    net::sgd_step(net, &grads, cfg.base_lr, &cfg.role_multipliers)?;
    if !net.is_finite() {
        return Err(Error::DivergedTraining {
            step,
            reason: "non-finite parameters after update".into(),
        });
    }
    let b = ev.breakdown;
    Ok(StepRecord {
        step,
        ce: b.ce,
        mmd_total: b.mmd_total(),
        mmd_per_layer: b.mmd.iter().map(|(_, v)| *v).collect(),
        total: b.total,
        fallback_layers: b.fallback_layers,
    })
}

/// Endless minibatch index stream: reshuffled every epoch, wrapping around.
#[derive(Debug, Clone)]
pub struct BatchStream {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..len).collect(),
            pos: 0,
            rng: rng::seeded(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Run `cfg.steps` joint steps with independent per-domain batch streams.
pub fn train_dan(
    net: &Network,
    source: &LabeledData,
    target: ArrayView2<'_, f64>,
    cfg: &DanConfig,
) -> Result<(Network, TrainHistory)> {
    cfg.validate()?;
    if source.is_empty() || target.nrows() == 0 {
        return Err(invalid("source and target datasets must be non-empty"));
    }
    let layers = adapt_layer_indices(net, cfg)?;
    let mut net = net.clone();
    let mut history = TrainHistory {
        lambda: cfg.lambda,
        layers,
        records: Vec::with_capacity(cfg.steps),
    };
    let mut src_stream = BatchStream::new(source.len(), rng::derive(cfg.seed, &[rng::STREAM_SOURCE_BATCH]));
    let mut tgt_stream = BatchStream::new(target.nrows(), rng::derive(cfg.seed, &[rng::STREAM_TARGET_BATCH]));
    let mut memory = BankMemory::default();
    for step in 0..cfg.steps {
        let (sx, sy) = source.select(&src_stream.next_batch(cfg.batch_size));
        let tx = target.select(Axis(0), &tgt_stream.next_batch(cfg.batch_size));
        history
            .records
            .push(dan_step(&mut net, sx.view(), &sy, tx.view(), cfg, &mut memory, step)?);
    }
    Ok((net, history))
}

/// Plain supervised minibatch SGD on the source data alone. Draws source
/// batches from the same stream as [`train_dan`].
pub fn train_supervised(net: &Network, source: &LabeledData, cfg: &DanConfig) -> Result<(Network, Vec<f64>)> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(invalid("source dataset must be non-empty"));
    }
    let mut net = net.clone();
    let mut stream = BatchStream::new(source.len(), rng::derive(cfg.seed, &[rng::STREAM_SOURCE_BATCH]));
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (x, y) = source.select(&stream.next_batch(cfg.batch_size));
        let trace = net::forward(&net, x.view())?;
        losses.push(net::cross_entropy(trace.output().view(), &y)?);
        let og = net::cross_entropy_grad(trace.output().view(), &y)?;
        let grads = net::backward(&net, &trace, og.view(), &[])?;
        if !grads.is_finite() {
            return Err(Error::DivergedTraining {
                step,
                reason: "non-finite gradient".into(),
            });
        }
        net::sgd_step(&mut net, &grads, cfg.base_lr, &cfg.role_multipliers)?;
    }
    Ok((net, losses))
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(net: &Network, data: &LabeledData) -> Result<f64> {
    if data.is_empty() {
        return Err(invalid("empty dataset"));
    }
    let probs = net::predict(net, data.inputs.view())?;
    let hits = net::argmax_rows(probs.view())
        .iter()
        .zip(&data.labels)
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / data.len() as f64)
}
