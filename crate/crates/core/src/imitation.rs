//! Demonstration datasets, velocity discretization, network-driven policies,
//! behavior cloning and DAgger.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dan::{self, DanConfig, LabeledData};
use crate::error::{invalid, Error, Result};
use crate::net::{self, Network};
use crate::rng;
use crate::sim::{self, DomainConfig, ExpertConfig, ForestWorld, ScanPolicy, WorldParams};

/// Width every scan is resampled to before it reaches a network.
pub const NET_INPUT_WIDTH: usize = 64;

/// Coarse velocities as fractions of `v_max`: left, centre, right.
pub const COARSE3_LEVELS: [f64; 3] = [-0.5, 0.0, 0.5];
/// Expert commands with `|v| < COARSE3_THRESHOLD · v_max` are labeled centre.
pub const COARSE3_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LabelSpace {
    Fine { bins: usize },
    Coarse3,
}

impl LabelSpace {
    pub fn classes(&self) -> usize {
        match self {
            LabelSpace::Fine { bins } => *bins,
            LabelSpace::Coarse3 => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LabelSpace::Fine { bins } if *bins < 3 || bins % 2 == 0 => {
                Err(invalid(format!("bin count must be odd and ≥ 3, got {bins}")))
            }
            _ => Ok(()),
        }
    }

    /// Command associated with class `k`.
    pub fn value(&self, k: usize, v_max: f64) -> f64 {
        match self {
            LabelSpace::Fine { bins } => bin_center(k, *bins, v_max),
            LabelSpace::Coarse3 => COARSE3_LEVELS[k] * v_max,
        }
    }

    /// Class of an (already representable) velocity.
    pub fn class_of(&self, v: f64, v_max: f64) -> usize {
        match self {
            LabelSpace::Fine { bins } => discretize(v, *bins, v_max).0,
            LabelSpace::Coarse3 => {
                if v.abs() < COARSE3_THRESHOLD * v_max {
                    1
                } else if v < 0.0 {
                    0
                } else {
                    2
                }
            }
        }
    }

    /// The velocity a demonstration in this space records for expert
    /// command `v`.
    pub fn label_velocity(&self, v: f64, v_max: f64) -> f64 {
        match self {
            LabelSpace::Fine { .. } => v.clamp(-v_max, v_max),
            LabelSpace::Coarse3 => self.value(self.class_of(v, v_max), v_max),
        }
    }
}

/// Uniform bin of `v` over `[−v_max, v_max]`; the flag is set when `v` had
/// to be clamped into range.
pub fn discretize(v: f64, bins: usize, v_max: f64) -> (usize, bool) {
    let clamped = v.clamp(-v_max, v_max);
    let width = 2.0 * v_max / bins as f64;
    let k = (((clamped + v_max) / width).floor() as usize).min(bins - 1);
    (k, clamped != v)
}

/// Midpoint of bin `k`.
pub fn bin_center(k: usize, bins: usize, v_max: f64) -> f64 {
    let width = 2.0 * v_max / bins as f64;
    -v_max + (k as f64 + 0.5) * width
}

/// Linear resampling with pixel centres aligned at both ends of the strip.
pub fn resample(scan: &[f64], width: usize) -> Vec<f64> {
    let n = scan.len();
    if n == width {
        return scan.to_vec();
    }
    let ratio = n as f64 / width as f64;
    (0..width)
        .map(|j| {
            let u = ((j as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n - 1) as f64);
            let i = (u.floor() as usize).min(n - 1);
            let f = u - i as f64;
            if i + 1 < n {
                scan[i] * (1.0 - f) + scan[i + 1] * f
            } else {
                scan[i]
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub scan: Vec<f64>,
    /// Expert lateral velocity; absent for unlabeled target scans.
    pub velocity: Option<f64>,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<Demonstration>,
    pub label_space: LabelSpace,
    pub v_max: f64,
}

impl Dataset {
    pub fn new(label_space: LabelSpace, v_max: f64) -> Self {
        Self {
            records: Vec::new(),
            label_space,
            v_max,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn width(&self) -> Option<usize> {
        self.records.first().map(|r| r.scan.len())
    }

    pub fn validate(&self) -> Result<()> {
        self.label_space.validate()?;
        let width = self.width();
        for (i, r) in self.records.iter().enumerate() {
            if Some(r.scan.len()) != width {
                return Err(Error::InvalidDataset(format!("record {i} has width {}, expected {:?}", r.scan.len(), width)));
            }
            if r.scan.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidDataset(format!("record {i} has intensities outside [0, 1]")));
            }
            if let Some(v) = r.velocity {
                if !(v.abs() <= self.v_max) {
                    return Err(Error::InvalidDataset(format!("record {i} velocity {v} exceeds v_max")));
                }
                if self.label_space == LabelSpace::Coarse3
                    && !COARSE3_LEVELS.iter().any(|&l| l * self.v_max == v)
                {
                    return Err(Error::InvalidDataset(format!("record {i} velocity {v} is not a coarse label")));
                }
            }
        }
        Ok(())
    }

    /// Append, never touching existing records.
    pub fn extend(&mut self, other: Dataset) -> Result<()> {
        if other.label_space != self.label_space || other.v_max != self.v_max {
            return Err(invalid("datasets use different label spaces"));
        }
        if let (Some(a), Some(b)) = (self.width(), other.width()) {
            if a != b {
                return Err(Error::InvalidDataset(format!("cannot mix widths {a} and {b}")));
            }
        }
        self.records.extend(other.records);
        Ok(())
    }

    /// Scans resampled to `width`, one row each.
    pub fn inputs(&self, width: usize) -> Array2<f64> {
        let mut x = Array2::zeros((self.len(), width));
        for (i, r) in self.records.iter().enumerate() {
            for (j, v) in resample(&r.scan, width).into_iter().enumerate() {
                x[[i, j]] = v;
            }
        }
        x
    }

    /// Resampled inputs with class labels; every record must be labeled.
    pub fn to_labeled(&self, width: usize) -> Result<LabeledData> {
        let labels = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.velocity
                    .map(|v| self.label_space.class_of(v, self.v_max))
                    .ok_or_else(|| Error::InvalidDataset(format!("record {i} is unlabeled")))
            })
            .collect::<Result<Vec<_>>>()?;
        LabeledData::new(self.inputs(width), labels)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str, label_space: LabelSpace, v_max: f64) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<Demonstration>, _>>()?;
        let ds = Self {
            records,
            label_space,
            v_max,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }

    pub fn load(path: &Path, label_space: LabelSpace, v_max: f64) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?, label_space, v_max)
    }
}

/// Checkpoint metadata needed to turn a network back into a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub label_space: LabelSpace,
    pub v_max: f64,
    pub input_width: usize,
}

/// `Σ_k p_k · value(k)` for one scan.
pub fn policy_act(net: &Network, scan: &[f64], meta: &PolicyMeta) -> Result<f64> {
    let probs = net::predict(net, ArrayView2::from_shape((1, scan.len()), scan).map_err(|e| invalid(e.to_string()))?)?;
    Ok(expected_command(probs.row(0).as_slice().expect("standard layout"), meta))
}

fn expected_command(probs: &[f64], meta: &PolicyMeta) -> f64 {
    let v: f64 = probs
        .iter()
        .enumerate()
        .map(|(k, p)| p * meta.label_space.value(k, meta.v_max))
        .sum();
    v.clamp(-meta.v_max, meta.v_max)
}

/// A trained network acting on raw scans of any width.
#[derive(Debug, Clone)]
pub struct NetPolicy {
    pub net: Network,
    pub meta: PolicyMeta,
}

impl NetPolicy {
    pub fn new(net: Network, meta: PolicyMeta) -> Result<Self> {
        if net.input_dim() != meta.input_width || net.output_dim() != meta.label_space.classes() {
            return Err(invalid("network shape does not match policy metadata"));
        }
        Ok(Self { net, meta })
    }

    pub fn command(&self, scan: &[f64]) -> Result<f64> {
        policy_act(&self.net, &resample(scan, self.meta.input_width), &self.meta)
    }
}

impl ScanPolicy for NetPolicy {
    fn act(&mut self, scan: &[f64]) -> f64 {
        self.command(scan).unwrap_or(0.0)
    }
}

/// Everything needed to fly in one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Env {
    pub domain: DomainConfig,
    pub world: WorldParams,
    pub label_space: LabelSpace,
    pub tag: String,
}

impl Env {
    pub fn world(&self, seed: u64) -> Result<ForestWorld> {
        sim::generate_world(&self.world, seed)
    }

    pub fn v_max(&self) -> f64 {
        self.domain.dynamics.v_max
    }

    fn expert(&self, expert: &ExpertConfig, v: &sim::TickView<'_>) -> f64 {
        sim::expert_policy(v.world, v.state, expert, &self.domain.dynamics)
    }
}

/// Roll episodes in fresh worlds until `n_meters` have been flown, letting
/// `choose(episode, tick, scan, expert_command)` pick the executed command.
/// Every visited tick is labeled with the expert; the crash tick is dropped.
fn collect<F>(env: &Env, expert: &ExpertConfig, n_meters: f64, seed: u64, mut choose: F) -> Result<Dataset>
where
    F: FnMut(u64, u64, &[f64], f64) -> f64,
{
    let v_max = env.v_max();
    let mut ds = Dataset::new(env.label_space, v_max);
    let mut flown = 0.0;
    let mut episode = 0u64;
    while flown < n_meters {
        let world = env.world(rng::derive(seed, &[rng::STREAM_WORLD, episode]))?;
        let max_dist = (n_meters - flown).min(env.world.length);
        let mut batch = Vec::new();
        let r = sim::fly(&world, &env.domain, max_dist, rng::derive(seed, &[episode]), |v| {
            let cmd = env.expert(expert, v);
            batch.push(Demonstration {
                scan: v.scan.to_vec(),
                velocity: Some(env.label_space.label_velocity(cmd, v_max)),
                domain: env.tag.clone(),
            });
            choose(episode, v.tick, v.scan, cmd)
        });
        if r.crashed {
            batch.pop();
        }
        ds.records.extend(batch);
        flown += r.distance_flown;
        episode += 1;
    }
    Ok(ds)
}

/// Expert-piloted demonstrations totalling at least `n_meters` of flight.
pub fn behavior_clone(env: &Env, expert: &ExpertConfig, n_meters: f64, seed: u64) -> Result<Dataset> {
    collect(env, expert, n_meters, seed, |_, _, _, cmd| cmd)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaggerConfig {
    /// Expert probability per iteration; first entry 1, non-increasing.
    pub betas: Vec<f64>,
    pub meters_per_iter: f64,
}

impl Default for DaggerConfig {
    fn default() -> Self {
        Self {
            betas: vec![1.0, 0.5, 0.25],
            meters_per_iter: 1000.0 / 3.0,
        }
    }
}

impl DaggerConfig {
    pub fn validate(&self) -> Result<()> {
        let b = &self.betas;
        if b.is_empty() || b[0] != 1.0 {
            return Err(invalid("DAgger needs at least one iteration and β₁ = 1"));
        }
        if b.iter().any(|v| !(0.0..=1.0).contains(v)) || b.windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid("β must lie in [0, 1] and be non-increasing"));
        }
        if !(self.meters_per_iter >= 0.0) {
            return Err(invalid("meters per iteration must be ≥ 0"));
        }
        Ok(())
    }
}

/// Supervised fit of a fresh copy of `init` on `data`.
pub fn fit(init: &Network, data: &Dataset, train: &DanConfig) -> Result<Network> {
    let labeled = data.to_labeled(init.input_dim())?;
    Ok(dan::train_supervised(init, &labeled, train)?.0)
}

#[derive(Debug, Clone)]
pub struct DaggerOutcome {
    pub policy: NetPolicy,
    pub dataset: Dataset,
    /// Records added by each iteration.
    pub per_iter: Vec<usize>,
}

/// Iteration `i` flies the β_i expert/learner mixture, labels every visited
/// state with the expert, aggregates, and retrains from `init`.
pub fn dagger(env: &Env, expert: &ExpertConfig, init: &Network, cfg: &DaggerConfig, train: &DanConfig, seed: u64) -> Result<DaggerOutcome> {
    cfg.validate()?;
    let meta = PolicyMeta {
        label_space: env.label_space,
        v_max: env.v_max(),
        input_width: init.input_dim(),
    };
    let mut dataset = Dataset::new(env.label_space, env.v_max());
    let mut per_iter = Vec::new();
    let mut learner: Option<NetPolicy> = None;
    for (i, &beta) in cfg.betas.iter().enumerate() {
        let iter_seed = rng::derive(seed, &[i as u64]);
        let mix_seed = rng::derive(iter_seed, &[rng::STREAM_MIXING]);
        let current = learner.clone();
        let fresh = collect(env, expert, cfg.meters_per_iter, iter_seed, |episode, tick, scan, cmd| {
            let use_expert = beta >= 1.0 || rng::derived(mix_seed, &[episode, tick]).random::<f64>() < beta;
            match (&current, use_expert) {
                (Some(p), false) => p.command(scan).unwrap_or(0.0),
                _ => cmd,
            }
        })?;
        per_iter.push(fresh.len());
        dataset.extend(fresh)?;
        if dataset.is_empty() {
            return Err(Error::InvalidDataset("DAgger collected no records".into()));
        }
        learner = Some(NetPolicy::new(fit(init, &dataset, train)?, meta.clone())?);
    }
    Ok(DaggerOutcome {
        policy: learner.expect("at least one iteration"),
        dataset,
        per_iter,
    })
}

/// Unlabeled scans from random-policy rollouts, `n_scans` in total.
pub fn random_scans(env: &Env, n_scans: usize, seed: u64) -> Result<Dataset> {
    let mut ds = Dataset::new(env.label_space, env.v_max());
    let mut episode = 0u64;
    while ds.len() < n_scans {
        let world = env.world(rng::derive(seed, &[rng::STREAM_WORLD, episode]))?;
        let mut pol = sim::RandomPolicy::new(env.v_max(), rng::derive(seed, &[rng::STREAM_POLICY, episode]));
        let mut scans = Vec::new();
        sim::fly(&world, &env.domain, env.world.length, rng::derive(seed, &[episode]), |v| {
            scans.push(v.scan.to_vec());
            pol.act(v.scan)
        });
        for scan in scans.into_iter().take(n_scans - ds.len()) {
            ds.records.push(Demonstration {
                scan,
                velocity: None,
                domain: env.tag.clone(),
            });
        }
        episode += 1;
    }
    Ok(ds)
}

/// Per-bin label counts, handy for logs.
pub fn label_histogram(ds: &Dataset) -> String {
    let mut counts = vec![0usize; ds.label_space.classes()];
    for r in &ds.records {
        if let Some(v) = r.velocity {
            counts[ds.label_space.class_of(v, ds.v_max)] += 1;
        }
    }
    let mut s = String::new();
    for (k, c) in counts.iter().enumerate() {
        let _ = write!(s, "{}{k}:{c}", if k == 0 { "" } else { " " });
    }
    s
}
