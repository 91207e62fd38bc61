//! Gaussian multi-kernel machinery and maximum mean discrepancy estimators.
//!
//! The characteristic kernel is a convex mixture of Gaussian RBF kernels,
//! `k(x, y) = Σ_u β_u exp(−‖x − y‖² / (2σ_u²))`. All estimators work in 64-bit
//! arithmetic. The quadratic estimators sum over rows in a canonical
//! (lexicographically sorted) order, so their value does not depend on how
//! the rows of either sample were ordered on input.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Negative residue of the biased estimator below this magnitude is rounding.
const CLAMP_TOL: f64 = 1e-12;

/// Bandwidths and convex weights of a Gaussian multi-kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelBank {
    bandwidths: Vec<f64>,
    weights: Vec<f64>,
}

impl KernelBank {
    pub fn new(bandwidths: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() {
            return Err(invalid("kernel bank needs at least one bandwidth"));
        }
        if bandwidths.len() != weights.len() {
            return Err(invalid(format!(
                "{} bandwidths but {} weights",
                bandwidths.len(),
                weights.len()
            )));
        }
        if bandwidths.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(invalid("bandwidths must be finite and positive"));
        }
        if bandwidths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("bandwidths must be strictly increasing"));
        }
        if weights.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(invalid("kernel weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(invalid(format!("kernel weights sum to {total}, not 1")));
        }
        Ok(Self { bandwidths, weights })
    }

    pub fn single(sigma: f64) -> Result<Self> {
        Self::new(vec![sigma], vec![1.0])
    }

    pub fn uniform(bandwidths: Vec<f64>) -> Result<Self> {
        let n = bandwidths.len().max(1);
        Self::new(bandwidths, vec![1.0 / n as f64; n])
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.bandwidths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bandwidths.is_empty()
    }

    /// Mixture kernel value from a squared distance.
    #[inline]
    fn eval_sq(&self, d2: f64) -> f64 {
        let mut acc = 0.0;
        for (s, b) in self.bandwidths.iter().zip(&self.weights) {
            acc += b * (-d2 / (2.0 * s * s)).exp();
        }
        acc
    }

    /// `Σ_u β_u k_u(d²) / σ_u²`, the scalar factor of the kernel gradient.
    #[inline]
    fn grad_coeff_sq(&self, d2: f64) -> f64 {
        let mut acc = 0.0;
        for (s, b) in self.bandwidths.iter().zip(&self.weights) {
            let s2 = s * s;
            acc += b * (-d2 / (2.0 * s2)).exp() / s2;
        }
        acc
    }
}

/// An empirical sample: `n` rows of dimension `d`, all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    data: Array2<f64>,
}

impl SampleSet {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sample entries must be finite"));
        }
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().into_owned()
        };
        Ok(Self { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(invalid("sample rows have differing dimensions"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(Array2::from_shape_vec((n, d), flat).expect("shape checked"))
    }

    /// Single-column sample from scalars.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = values.iter().map(|v| vec![*v]).collect();
        Self::from_rows(&rows)
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    /// Row-wise concatenation.
    pub fn pooled(&self, other: &SampleSet) -> Result<SampleSet> {
        check_dims(self, other)?;
        let data = ndarray::concatenate(Axis(0), &[self.view(), other.view()])
            .expect("dimensions checked");
        Ok(SampleSet { data })
    }
}

fn check_dims(a: &SampleSet, b: &SampleSet) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(invalid(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `exp(−‖x − y‖² / (2σ²))`.
pub fn gaussian_kernel(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(invalid(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("bandwidth must be positive, got {sigma}")));
    }
    Ok((-sq_dist(x, y) / (2.0 * sigma * sigma)).exp())
}

pub fn multi_kernel(x: &[f64], y: &[f64], bank: &KernelBank) -> Result<f64> {
    if x.len() != y.len() {
        return Err(invalid(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    Ok(bank.eval_sq(sq_dist(x, y)))
}

/// Median of all pairwise Euclidean distances of the pooled sample.
///
/// Fails only when every row is identical. If more than half of the pairs
/// coincide the plain median is zero; the median of the strictly positive
/// distances is returned instead.
pub fn median_heuristic(pooled: &SampleSet) -> Result<f64> {
    let n = pooled.n();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let x = pooled.view();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let xi = x.row(i);
        let xi = xi.as_slice().expect("standard layout");
        for j in (i + 1)..n {
            let xj = x.row(j);
            dists.push(sq_dist(xi, xj.as_slice().expect("standard layout")).sqrt());
        }
    }
    let m = median(&mut dists);
    if m > 0.0 {
        return Ok(m);
    }
    let mut positive: Vec<f64> = dists.into_iter().filter(|d| *d > 0.0).collect();
    if positive.is_empty() {
        return Err(Error::DegenerateSample(
            "all pooled rows are identical".into(),
        ));
    }
    Ok(median(&mut positive))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Five-kernel geometric ladder `{σ/4, σ/2, σ, 2σ, 4σ}` around the median
/// distance, uniformly weighted.
pub fn default_bank(pooled: &SampleSet) -> Result<KernelBank> {
    let sigma = median_heuristic(pooled)?;
    KernelBank::uniform(vec![
        sigma / 4.0,
        sigma / 2.0,
        sigma,
        2.0 * sigma,
        4.0 * sigma,
    ])
}

/// Row indices in lexicographic row order (ties broken by index).
fn canonical_order(x: ArrayView2<'_, f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.nrows()).collect();
    idx.sort_by(|&a, &b| {
        for (p, q) in x.row(a).iter().zip(x.row(b).iter()) {
            match p.total_cmp(q) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        std::cmp::Ordering::Equal
    });
    idx
}

fn sorted_rows(s: &SampleSet) -> Array2<f64> {
    let order = canonical_order(s.view());
    s.view().select(Axis(0), &order)
}

/// `Σ_i Σ_j k(a_i, b_j)`, optionally skipping `i == j`, row-major ascending.
fn block_sum(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, bank: &KernelBank, skip_diag: bool) -> f64 {
    let mut total = 0.0;
    for (i, ai) in a.outer_iter().enumerate() {
        let ai = ai.as_slice().expect("standard layout");
        let mut row = 0.0;
        for (j, bj) in b.outer_iter().enumerate() {
            if skip_diag && i == j {
                continue;
            }
            row += bank.eval_sq(sq_dist(ai, bj.as_slice().expect("standard layout")));
        }
        total += row;
    }
    total
}

/// Biased (V-statistic) MMD² estimate; never negative.
pub fn mmd2_biased(xs: &SampleSet, xt: &SampleSet, bank: &KernelBank) -> Result<f64> {
    check_dims(xs, xt)?;
    let (s, t) = (sorted_rows(xs), sorted_rows(xt));
    let ns = s.nrows() as f64;
    let nt = t.nrows() as f64;
    let kss = block_sum(s.view(), s.view(), bank, false);
    let ktt = block_sum(t.view(), t.view(), bank, false);
    let kst = block_sum(s.view(), t.view(), bank, false);
    let value = kss / (ns * ns) + ktt / (nt * nt) - 2.0 * kst / (ns * nt);
    Ok(clamp_residue(value))
}

fn clamp_residue(value: f64) -> f64 {
    if value < 0.0 && value > -CLAMP_TOL {
        0.0
    } else {
        value.max(0.0)
    }
}

/// Unbiased (U-statistic) MMD² estimate. May be negative.
pub fn mmd2_unbiased(xs: &SampleSet, xt: &SampleSet, bank: &KernelBank) -> Result<f64> {
    check_dims(xs, xt)?;
    for s in [xs, xt] {
        if s.n() < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: s.n() });
        }
    }
    let (s, t) = (sorted_rows(xs), sorted_rows(xt));
    let ns = s.nrows() as f64;
    let nt = t.nrows() as f64;
    let kss = block_sum(s.view(), s.view(), bank, true);
    let ktt = block_sum(t.view(), t.view(), bank, true);
    let kst = block_sum(s.view(), t.view(), bank, false);
    Ok(kss / (ns * (ns - 1.0)) + ktt / (nt * (nt - 1.0)) - 2.0 * kst / (ns * nt))
}

/// Linear-time MMD² estimate over consecutive pairs `(z_{2i}, z_{2i+1})`.
///
/// Uses the first `2⌊min(n_s, n_t)/2⌋` rows of each sample in their given
/// order, so the value depends on row order.
pub fn mmd2_linear(xs: &SampleSet, xt: &SampleSet, bank: &KernelBank) -> Result<f64> {
    check_dims(xs, xt)?;
    let n = xs.n().min(xt.n());
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let m = n / 2;
    let (s, t) = (xs.view(), xt.view());
    let row = |a: &ArrayView2<'_, f64>, i: usize| a.row(i).to_vec();
    let mut total = 0.0;
    for i in 0..m {
        let (x, xp) = (row(&s, 2 * i), row(&s, 2 * i + 1));
        let (y, yp) = (row(&t, 2 * i), row(&t, 2 * i + 1));
        total += bank.eval_sq(sq_dist(&x, &xp)) + bank.eval_sq(sq_dist(&y, &yp))
            - bank.eval_sq(sq_dist(&x, &yp))
            - bank.eval_sq(sq_dist(&xp, &y));
    }
    Ok(total / m as f64)
}

/// Gradient of the biased MMD² with respect to every row of both samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MmdGradient {
    pub value: f64,
    pub source: Array2<f64>,
    pub target: Array2<f64>,
}

/// Biased MMD² together with its analytic gradient.
///
/// With `∂k(x, y)/∂x = c(x, y)·(y − x)` and `c = Σ_u β_u k_u / σ_u²`:
/// `∂/∂s_a = (2/n_s²) Σ_j c(s_a, s_j)(s_j − s_a) − (2/(n_s n_t)) Σ_j c(s_a, t_j)(t_j − s_a)`
/// and symmetrically for target rows.
pub fn mmd2_biased_grad(xs: &SampleSet, xt: &SampleSet, bank: &KernelBank) -> Result<MmdGradient> {
    let value = mmd2_biased(xs, xt, bank)?;
    let (s, t) = (xs.view(), xt.view());
    let ns = s.nrows() as f64;
    let nt = t.nrows() as f64;
    let within_s = 2.0 / (ns * ns);
    let within_t = 2.0 / (nt * nt);
    let cross = 2.0 / (ns * nt);
    let source = side_grad(s, t, bank, within_s, cross);
    let target = side_grad(t, s, bank, within_t, cross);
    Ok(MmdGradient {
        value,
        source,
        target,
    })
}

fn side_grad(
    own: ArrayView2<'_, f64>,
    other: ArrayView2<'_, f64>,
    bank: &KernelBank,
    within: f64,
    cross: f64,
) -> Array2<f64> {
    let d = own.ncols();
    let mut grad = Array2::<f64>::zeros(own.raw_dim());
    let mut acc = vec![0.0; d];
    for (a, xa) in own.outer_iter().enumerate() {
        let xa = xa.as_slice().expect("standard layout");
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (j, xj) in own.outer_iter().enumerate() {
            if j == a {
                continue;
            }
            let xj = xj.as_slice().expect("standard layout");
            let c = within * bank.grad_coeff_sq(sq_dist(xa, xj));
            for k in 0..d {
                acc[k] += c * (xj[k] - xa[k]);
            }
        }
        for yj in other.outer_iter() {
            let yj = yj.as_slice().expect("standard layout");
            let c = cross * bank.grad_coeff_sq(sq_dist(xa, yj));
            for k in 0..d {
                acc[k] -= c * (yj[k] - xa[k]);
            }
        }
        grad.row_mut(a).iter_mut().zip(&acc).for_each(|(g, v)| *g = *v);
    }
    grad
}

/// Pooled Gram matrix of the mixture kernel.
fn pooled_gram(z: ArrayView2<'_, f64>, bank: &KernelBank) -> Array2<f64> {
    let n = z.nrows();
    let mut k = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let zi = z.row(i);
        let zi = zi.as_slice().expect("standard layout");
        k[[i, i]] = bank.eval_sq(0.0);
        for j in (i + 1)..n {
            let v = bank.eval_sq(sq_dist(zi, z.row(j).as_slice().expect("standard layout")));
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

/// Unbiased statistic from a pooled Gram matrix and a source-membership mask.
fn unbiased_from_gram(k: &Array2<f64>, is_source: &[bool], ns: usize, nt: usize) -> f64 {
    let n = is_source.len();
    let (mut ss, mut tt, mut st) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let row = k.row(i);
        let row = row.as_slice().expect("standard layout");
        for j in (i + 1)..n {
            let v = row[j];
            match (is_source[i], is_source[j]) {
                (true, true) => ss += v,
                (false, false) => tt += v,
                _ => st += v,
            }
        }
    }
    let (ns, nt) = (ns as f64, nt as f64);
    2.0 * ss / (ns * (ns - 1.0)) + 2.0 * tt / (nt * (nt - 1.0)) - 2.0 * st / (ns * nt)
}

/// Permutation two-sample test on the unbiased MMD² statistic.
///
/// Returns `p = (1 + #{permuted ≥ observed}) / (n_perms + 1)`.
pub fn permutation_test(
    xs: &SampleSet,
    xt: &SampleSet,
    bank: &KernelBank,
    n_perms: usize,
    seed: u64,
) -> Result<f64> {
    check_dims(xs, xt)?;
    for s in [xs, xt] {
        if s.n() < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: s.n() });
        }
    }
    if n_perms < 99 {
        return Err(invalid(format!("need at least 99 permutations, got {n_perms}")));
    }
    let (ns, nt) = (xs.n(), xt.n());
    let pooled = xs.pooled(xt)?;
    let gram = pooled_gram(pooled.view(), bank);
    let mut mask: Vec<bool> = (0..ns + nt).map(|i| i < ns).collect();
    let observed = unbiased_from_gram(&gram, &mask, ns, nt);
    let mut rng = rng::seeded(seed);
    let mut exceed = 0usize;
    for _ in 0..n_perms {
        mask.shuffle(&mut rng);
        if unbiased_from_gram(&gram, &mask, ns, nt) >= observed {
            exceed += 1;
        }
    }
    Ok((1 + exceed) as f64 / (n_perms + 1) as f64)
}

/// Weights proportional to each kernel's positive unbiased MMD².
///
/// A cheap stand-in for power-optimal kernel selection: kernels that see
/// more discrepancy get more weight. Falls back to uniform weights when no
/// kernel sees a positive discrepancy.
pub fn heuristic_kernel_weights(
    xs: &SampleSet,
    xt: &SampleSet,
    bandwidths: &[f64],
) -> Result<KernelBank> {
    let mut scores = Vec::with_capacity(bandwidths.len());
    for &sigma in bandwidths {
        let single = KernelBank::single(sigma)?;
        scores.push(mmd2_unbiased(xs, xt, &single)?.max(0.0));
    }
    weights_from_scores(bandwidths.to_vec(), &scores)
}

fn weights_from_scores(bandwidths: Vec<f64>, scores: &[f64]) -> Result<KernelBank> {
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return KernelBank::uniform(bandwidths);
    }
    let mut weights: Vec<f64> = scores.iter().map(|s| s / total).collect();
    // Push the rounding residue into the largest weight so Σβ = 1 holds tightly.
    let residue = 1.0 - weights.iter().sum::<f64>();
    let imax = weights
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    weights[imax] += residue;
    KernelBank::new(bandwidths, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::close;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    mod approx_eq {
        pub fn close(a: f64, b: f64, tol: f64) -> bool {
            (a - b).abs() <= tol
        }
    }

    fn random_set(rng: &mut impl Rng, n: usize, d: usize, shift: f64) -> SampleSet {
        let data = Array2::from_shape_fn((n, d), |_| {
            let z: f64 = StandardNormal.sample(rng);
            z + shift
        });
        SampleSet::new(data).unwrap()
    }

    /// Brute-force oracle: direct double sums with an inline kernel.
    fn oracle_k(x: &[f64], y: &[f64], bank: &KernelBank) -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
        bank.bandwidths()
            .iter()
            .zip(bank.weights())
            .map(|(s, w)| w * (-d2 / (2.0 * s * s)).exp())
            .sum()
    }

    fn oracle_biased(xs: &SampleSet, xt: &SampleSet, bank: &KernelBank) -> f64 {
        let s: Vec<Vec<f64>> = xs.view().outer_iter().map(|r| r.to_vec()).collect();
        let t: Vec<Vec<f64>> = xt.view().outer_iter().map(|r| r.to_vec()).collect();
        let (ns, nt) = (s.len() as f64, t.len() as f64);
        let mut a = 0.0;
        for x in &s {
            for y in &s {
                a += oracle_k(x, y, bank);
            }
        }
        let mut b = 0.0;
        for x in &t {
            for y in &t {
                b += oracle_k(x, y, bank);
            }
        }
        let mut c = 0.0;
        for x in &s {
            for y in &t {
                c += oracle_k(x, y, bank);
            }
        }
        a / (ns * ns) + b / (nt * nt) - 2.0 * c / (ns * nt)
    }

    #[test]
    fn gaussian_kernel_examples() {
        assert_eq!(gaussian_kernel(&[3.1, -2.0], &[3.1, -2.0], 1.0).unwrap(), 1.0);
        let v = gaussian_kernel(&[0.0, 0.0], &[2.0, 0.0], 2f64.sqrt()).unwrap();
        assert!(close(v, (-1f64).exp(), 1e-15));
        assert!(close(v, 0.367879, 1e-6));
        let wide = gaussian_kernel(&[0.0], &[1.0], 1e6).unwrap();
        assert!(close(wide, 1.0, 1e-9));
    }

    #[test]
    fn gaussian_kernel_errors() {
        assert!(matches!(
            gaussian_kernel(&[0.0], &[0.0, 1.0], 1.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(gaussian_kernel(&[0.0], &[1.0], 0.0).is_err());
        assert!(gaussian_kernel(&[0.0], &[1.0], -1.0).is_err());
    }

    #[test]
    fn multi_kernel_examples() {
        let bank = KernelBank::new(vec![1.0, 2.0], vec![0.5, 0.5]).unwrap();
        assert_eq!(multi_kernel(&[0.7], &[0.7], &bank).unwrap(), 1.0);
        let v = multi_kernel(&[0.0], &[2.0], &bank).unwrap();
        let expected = 0.5 * (-2f64).exp() + 0.5 * (-0.5f64).exp();
        assert!(close(v, expected, 1e-15));
        assert!(close(v, 0.370933, 1e-6));

        let single = KernelBank::single(1.3).unwrap();
        let (x, y) = ([0.2, -1.0, 4.0], [1.0, 0.5, 3.0]);
        assert_eq!(
            multi_kernel(&x, &y, &single).unwrap(),
            gaussian_kernel(&x, &y, 1.3).unwrap()
        );
    }

    #[test]
    fn bank_invariants_are_enforced() {
        assert!(KernelBank::new(vec![], vec![]).is_err());
        assert!(KernelBank::new(vec![1.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(KernelBank::new(vec![2.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(KernelBank::new(vec![1.0, 2.0], vec![0.6, 0.5]).is_err());
        assert!(KernelBank::new(vec![1.0, 2.0], vec![1.2, -0.2]).is_err());
        assert!(KernelBank::new(vec![1.0], vec![0.5, 0.5]).is_err());
        assert!(KernelBank::new(vec![-1.0], vec![1.0]).is_err());
    }

    #[test]
    fn median_heuristic_examples() {
        let s = SampleSet::from_scalars(&[0.0, 1.0, 3.0]).unwrap();
        assert_eq!(median_heuristic(&s).unwrap(), 2.0);
        let s = SampleSet::from_scalars(&[0.0, 1.0]).unwrap();
        assert_eq!(median_heuristic(&s).unwrap(), 1.0);
        let s = SampleSet::from_scalars(&[4.0, 4.0, 4.0]).unwrap();
        assert!(matches!(median_heuristic(&s), Err(Error::DegenerateSample(_))));
        // Mostly duplicated rows: plain median is zero, positive median is used.
        let s = SampleSet::from_scalars(&[0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(median_heuristic(&s).unwrap(), 1.0);
    }

    #[test]
    fn default_bank_examples() {
        // Pairwise distances {1, 2, 3} -> median 2.
        let s = SampleSet::from_scalars(&[0.0, 1.0, 3.0]).unwrap();
        let bank = default_bank(&s).unwrap();
        assert_eq!(bank.bandwidths(), &[0.5, 1.0, 2.0, 4.0, 8.0]);
        assert_eq!(bank.weights(), &[0.2; 5]);
        let s = SampleSet::from_scalars(&[5.0, 6.0]).unwrap();
        let bank = default_bank(&s).unwrap();
        assert_eq!(bank.bandwidths(), &[0.25, 0.5, 1.0, 2.0, 4.0]);
        assert!(close(bank.weights().iter().sum::<f64>(), 1.0, 1e-12));
        let s = SampleSet::from_scalars(&[1.0, 1.0]).unwrap();
        assert!(default_bank(&s).is_err());
    }

    #[test]
    fn biased_examples() {
        let mut rng = rng::seeded(11);
        let x = random_set(&mut rng, 7, 3, 0.0);
        let bank = KernelBank::new(vec![0.5, 1.0], vec![0.3, 0.7]).unwrap();
        assert_eq!(mmd2_biased(&x, &x, &bank).unwrap(), 0.0);

        let single = KernelBank::single(2f64.sqrt()).unwrap();
        let a = SampleSet::from_scalars(&[0.0]).unwrap();
        let b = SampleSet::from_scalars(&[2.0]).unwrap();
        let v = mmd2_biased(&a, &b, &single).unwrap();
        assert!(close(v, 2.0 - 2.0 * (-1f64).exp(), 1e-15));
        assert!(close(v, 1.264241, 1e-6));

        let xs = random_set(&mut rng, 10, 3, 0.0);
        let xt = random_set(&mut rng, 10, 3, 0.5);
        let bank = KernelBank::uniform(vec![0.5, 1.0, 2.0]).unwrap();
        let v = mmd2_biased(&xs, &xt, &bank).unwrap();
        assert!(close(v, oracle_biased(&xs, &xt, &bank), 1e-12));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = SampleSet::new(Array2::zeros((3, 2))).unwrap();
        let b = SampleSet::new(Array2::zeros((3, 3))).unwrap();
        let bank = KernelBank::single(1.0).unwrap();
        assert!(matches!(mmd2_biased(&a, &b, &bank), Err(Error::InvalidArgument(_))));
        assert!(mmd2_unbiased(&a, &b, &bank).is_err());
        assert!(mmd2_linear(&a, &b, &bank).is_err());
        assert!(mmd2_biased_grad(&a, &b, &bank).is_err());
    }

    #[test]
    fn unbiased_examples() {
        let bank = KernelBank::single(1.0).unwrap();
        let pair = SampleSet::new(array![[0.0, 1.0], [1.0, -0.5]]).unwrap();
        let kab = gaussian_kernel(&[0.0, 1.0], &[1.0, -0.5], 1.0).unwrap();
        let v = mmd2_unbiased(&pair, &pair, &bank).unwrap();
        assert!(close(v, kab - 1.0, 1e-15));
        assert!(v <= 0.0);
        let one = SampleSet::from_scalars(&[0.0]).unwrap();
        let two = SampleSet::from_scalars(&[0.0, 1.0]).unwrap();
        assert!(matches!(
            mmd2_unbiased(&one, &two, &bank),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn unbiased_is_centered_under_the_null() {
        let mut rng = rng::seeded(2024);
        let bank = KernelBank::uniform(vec![0.5, 1.0, 2.0, 4.0]).unwrap();
        let trials = 1000;
        let values: Vec<f64> = (0..trials)
            .map(|_| {
                let a = random_set(&mut rng, 50, 2, 0.0);
                let b = random_set(&mut rng, 50, 2, 0.0);
                mmd2_unbiased(&a, &b, &bank).unwrap()
            })
            .collect();
        let mean = values.iter().sum::<f64>() / trials as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let se = (var / trials as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn linear_examples() {
        let bank = KernelBank::single(1.5).unwrap();
        let a = SampleSet::from_scalars(&[0.3, 0.3]).unwrap();
        let b = SampleSet::from_scalars(&[1.1, 1.1]).unwrap();
        let kab = gaussian_kernel(&[0.3], &[1.1], 1.5).unwrap();
        assert!(close(mmd2_linear(&a, &b, &bank).unwrap(), 2.0 - 2.0 * kab, 1e-15));

        let mut rng = rng::seeded(5);
        let x = random_set(&mut rng, 6, 2, 0.0);
        assert_eq!(mmd2_linear(&x, &x, &bank).unwrap(), 0.0);

        // Four points per side: mean of two h terms.
        let xs = [0.0, 1.0, 2.0, 0.5];
        let xt = [0.2, 3.0, -1.0, 1.5];
        let k = |p: f64, q: f64| gaussian_kernel(&[p], &[q], 1.5).unwrap();
        let h = |x: f64, xp: f64, y: f64, yp: f64| k(x, xp) + k(y, yp) - k(x, yp) - k(xp, y);
        let expected = 0.5 * (h(xs[0], xs[1], xt[0], xt[1]) + h(xs[2], xs[3], xt[2], xt[3]));
        let v = mmd2_linear(
            &SampleSet::from_scalars(&xs).unwrap(),
            &SampleSet::from_scalars(&xt).unwrap(),
            &bank,
        )
        .unwrap();
        assert!(close(v, expected, 1e-15));

        let one = SampleSet::from_scalars(&[0.0]).unwrap();
        assert!(mmd2_linear(&one, &one, &bank).is_err());
    }

    #[test]
    fn gradient_examples() {
        let single = KernelBank::single(2f64.sqrt()).unwrap();
        let a = SampleSet::from_scalars(&[0.0]).unwrap();
        let b = SampleSet::from_scalars(&[2.0]).unwrap();
        let g = mmd2_biased_grad(&a, &b, &single).unwrap();
        assert!(close(g.source[[0, 0]], -2.0 * (-1f64).exp(), 1e-15));
        assert!(close(g.source[[0, 0]], -0.735759, 1e-6));
        assert!(close(g.target[[0, 0]], 2.0 * (-1f64).exp(), 1e-15));

        let mut rng = rng::seeded(99);
        let x = random_set(&mut rng, 6, 3, 0.0);
        let bank = KernelBank::uniform(vec![0.5, 1.0, 2.0]).unwrap();
        let g = mmd2_biased_grad(&x, &x, &bank).unwrap();
        let sum = &g.source + &g.target;
        assert!(sum.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = rng::seeded(314);
        let xs = random_set(&mut rng, 8, 3, 0.0);
        let xt = random_set(&mut rng, 8, 3, 0.7);
        let bank = KernelBank::uniform(vec![0.5, 1.0, 2.0, 4.0]).unwrap();
        let g = mmd2_biased_grad(&xs, &xt, &bank).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for side in 0..2 {
            let base = if side == 0 { &xs } else { &xt };
            for i in 0..8 {
                for k in 0..3 {
                    let mut plus = base.clone().into_inner();
                    let mut minus = plus.clone();
                    plus[[i, k]] += h;
                    minus[[i, k]] -= h;
                    let eval = |m: Array2<f64>| {
                        let m = SampleSet::new(m).unwrap();
                        if side == 0 {
                            oracle_biased(&m, &xt, &bank)
                        } else {
                            oracle_biased(&xs, &m, &bank)
                        }
                    };
                    let fd = (eval(plus) - eval(minus)) / (2.0 * h);
                    let an = if side == 0 { g.source[[i, k]] } else { g.target[[i, k]] };
                    worst = worst.max((fd - an).abs() / an.abs().max(fd.abs()).max(1e-8));
                }
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn permutation_test_detects_gross_shift_and_is_deterministic() {
        let mut rng = rng::seeded(8);
        let xs = random_set(&mut rng, 100, 1, 0.0);
        let shifted: Array2<f64> = xs.view().mapv(|v| v + 2.0);
        let xt = SampleSet::new(shifted).unwrap();
        let bank = default_bank(&xs.pooled(&xt).unwrap()).unwrap();
        let p = permutation_test(&xs, &xt, &bank, 99, 1).unwrap();
        assert!(p <= 0.01, "p = {p}");

        let a = random_set(&mut rng, 20, 2, 0.0);
        let b = random_set(&mut rng, 20, 2, 0.0);
        let p1 = permutation_test(&a, &b, &bank, 99, 42).unwrap();
        let p2 = permutation_test(&a, &b, &bank, 99, 42).unwrap();
        assert_eq!(p1, p2);
        assert!(permutation_test(&a, &b, &bank, 10, 42).is_err());
    }

    #[test]
    fn heuristic_weights_examples() {
        let bandwidths = vec![0.5, 1.0, 2.0];
        // Identical samples: every per-kernel unbiased MMD² is ≤ 0.
        let x = SampleSet::from_scalars(&[0.0, 1.0, 2.0]).unwrap();
        let bank = heuristic_kernel_weights(&x, &x, &bandwidths).unwrap();
        assert_eq!(bank.weights(), &[1.0 / 3.0; 3]);

        let bank = weights_from_scores(bandwidths.clone(), &[0.0, 0.4, 0.0]).unwrap();
        assert_eq!(bank.weights(), &[0.0, 1.0, 0.0]);

        let mut rng = rng::seeded(77);
        let xs = random_set(&mut rng, 30, 2, 0.0);
        let xt = random_set(&mut rng, 30, 2, 1.0);
        let bank = heuristic_kernel_weights(&xs, &xt, &bandwidths).unwrap();
        assert!(close(bank.weights().iter().sum::<f64>(), 1.0, 1e-12));
        let per: Vec<f64> = bandwidths
            .iter()
            .map(|s| mmd2_unbiased(&xs, &xt, &KernelBank::single(*s).unwrap()).unwrap())
            .collect();
        let weighted: f64 = per.iter().zip(bank.weights()).map(|(d, b)| d * b).sum();
        let uniform = per.iter().sum::<f64>() / per.len() as f64;
        assert!(weighted >= uniform);
    }
}
