//! Experiment orchestration: config, the four-policy pipeline, reports,
//! replay and summaries.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dan::{self, DanConfig, LabeledData};
use crate::error::{invalid, Error, Result};
use crate::imitation::{self, DaggerConfig, Dataset, Env, NetPolicy, PolicyMeta, NET_INPUT_WIDTH};
use crate::net::{self, Network};
use crate::rng;
use crate::scenarios::{self, Scenario, HIGH_DENSITY, LOW_DENSITY};
use crate::sim::{self, EpisodeResult, ExpertConfig, ForestWorld, RandomPolicy, ScanPolicy};

mod replay;
mod report;

pub use replay::{replay, ReplayLog, ReplayRow};
pub use report::{episodes_csv, sign_test, summarize, summary_csv, Comparison, EpisodeRow, PolicyCard, PolicyKind, Report, SummaryRow};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityRegime {
    Low,
    High,
}

impl DensityRegime {
    pub fn density(self) -> f64 {
        match self {
            DensityRegime::Low => LOW_DENSITY,
            DensityRegime::High => HIGH_DENSITY,
        }
    }

    pub fn of(density: f64) -> Self {
        if density >= HIGH_DENSITY {
            DensityRegime::High
        } else {
            DensityRegime::Low
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DensityRegime::Low => "low",
            DensityRegime::High => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoMethod {
    BehaviorClone,
    Dagger,
}

/// Root seeds. Every stream in a run is derived from one of these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Worlds flown while collecting source demos, target scans and oracle demos.
    pub world: u64,
    /// Network initialisation and minibatch order.
    pub training: u64,
    /// Held-out test worlds.
    pub eval: u64,
    /// λ-selection worlds, disjoint from the test worlds.
    pub validation: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub scenario: String,
    /// Overrides the target domain's tree density; `None` keeps the scenario's.
    pub density: Option<DensityRegime>,
    pub demo_method: DemoMethod,
    pub demo_meters: f64,
    /// DAgger only: expert mixing per iteration.
    pub dagger_betas: Vec<f64>,
    /// Unlabeled target scans from random-policy rollouts.
    pub target_scans: usize,
    /// Expert flight in the target domain for the oracle.
    pub oracle_meters: f64,
    pub eval_meters_total: f64,
    pub n_eval_worlds: usize,
    pub n_validation_worlds: usize,
    /// Supervised steps shared by every learned policy before adaptation.
    pub pretrain_steps: usize,
    pub lambda_grid: Vec<f64>,
    /// Adaptation stage. Its `lambda` is ignored (the grid decides) and its
    /// `seed` is replaced by one derived from `seeds.training`.
    pub dan: DanConfig,
    pub expert: ExpertConfig,
    pub seeds: Seeds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            scenario: "sanity_gamma".into(),
            density: None,
            demo_method: DemoMethod::BehaviorClone,
            demo_meters: 1000.0,
            dagger_betas: DaggerConfig::default().betas,
            target_scans: 5000,
            oracle_meters: 1000.0,
            eval_meters_total: 1000.0,
            n_eval_worlds: 10,
            n_validation_worlds: 10,
            pretrain_steps: 16000,
            lambda_grid: vec![0.1, 0.3, 1.0],
            dan: DanConfig {
                steps: 4000,
                base_lr: 0.02,
                ..DanConfig::default()
            },
            expert: ExpertConfig::default(),
            seeds: Seeds {
                world: 1,
                training: 2,
                eval: 3,
                validation: 4,
            },
        }
    }
}

impl ExperimentConfig {
    /// Parse a TOML config. Every seed must be written out; other fields
    /// fall back to defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| invalid(format!("config: {e}")))?;
        let seeds = raw
            .get("seeds")
            .and_then(|s| s.as_table())
            .ok_or_else(|| invalid("config: missing [seeds] table"))?;
        for key in ["world", "training", "eval", "validation"] {
            if !seeds.contains_key(key) {
                return Err(invalid(format!("config: seeds.{key} must be set explicitly")));
            }
        }
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(invalid(format!("unsupported config schema version {}", self.schema_version)));
        }
        scenarios::build_scenario(&self.scenario)?;
        if !(self.demo_meters > 0.0 && self.oracle_meters > 0.0 && self.eval_meters_total > 0.0) {
            return Err(invalid("demo, oracle and eval meters must be positive"));
        }
        if self.n_eval_worlds == 0 || self.n_validation_worlds == 0 || self.target_scans == 0 {
            return Err(invalid("world and scan counts must be positive"));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(invalid("lambda grid must be non-empty and ≥ 0"));
        }
        if self.demo_method == DemoMethod::Dagger {
            self.dagger().validate()?;
        }
        self.dan.validate()
    }

    fn dagger(&self) -> DaggerConfig {
        DaggerConfig {
            betas: self.dagger_betas.clone(),
            meters_per_iter: self.demo_meters / self.dagger_betas.len().max(1) as f64,
        }
    }

    /// Per-episode distance cap: the total budget spread over the test worlds.
    pub fn episode_meters(&self) -> f64 {
        self.eval_meters_total / self.n_eval_worlds as f64
    }

    fn scenario(&self) -> Result<Scenario> {
        let mut s = scenarios::build_scenario(&self.scenario)?;
        if let Some(d) = self.density {
            s.target.density = d.density();
        }
        Ok(s)
    }

    pub fn density_regime(&self) -> Result<DensityRegime> {
        Ok(DensityRegime::of(self.scenario()?.target.density))
    }

    fn pretrain(&self) -> DanConfig {
        DanConfig {
            lambda: 0.0,
            steps: self.pretrain_steps,
            seed: rng::derive(self.seeds.training, &[1]),
            ..self.dan.clone()
        }
    }

    fn adapt(&self, lambda: f64) -> DanConfig {
        DanConfig {
            lambda,
            seed: rng::derive(self.seeds.training, &[2]),
            ..self.dan.clone()
        }
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

/// Per-episode outcomes of a policy over `n` worlds derived from `seed`.
/// Episode `i` always gets the same world and dynamics seed, whichever policy
/// flies it.
pub fn evaluate<P, F>(env: &Env, n: usize, seed: u64, max_dist: f64, make: F) -> Result<Vec<EpisodeRow>>
where
    P: ScanPolicy,
    F: Fn(u64) -> P + Sync,
{
    evaluate_with(env, n, seed, max_dist, |world, episode_seed| {
        sim::run_episode(&mut make(episode_seed), world, &env.domain, max_dist, episode_seed)
    })
}

/// [`evaluate`] for pilots that need more than the scan: `fly(world, episode_seed)`.
pub fn evaluate_with<F>(env: &Env, n: usize, seed: u64, max_dist: f64, fly: F) -> Result<Vec<EpisodeRow>>
where
    F: Fn(&ForestWorld, u64) -> EpisodeResult + Sync,
{
    let mut params = env.world.clone();
    params.length = params.length.max(max_dist);
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let world_seed = rng::derive(seed, &[rng::STREAM_WORLD, i]);
            let episode_seed = rng::derive(seed, &[i]);
            let world = sim::generate_world(&params, world_seed)?;
            let r = fly(&world, episode_seed);
            Ok(EpisodeRow {
                episode: i as usize,
                world_seed,
                episode_seed,
                distance_flown: r.distance_flown,
                crashed: r.crashed,
                trees_passed: r.trees_passed,
                trees_hit: r.trees_hit,
            })
        })
        .collect()
}

pub fn random_policy(v_max: f64) -> impl Fn(u64) -> RandomPolicy + Sync {
    move |episode_seed| RandomPolicy::new(v_max, rng::derive(episode_seed, &[rng::STREAM_POLICY]))
}

fn mean_distance(rows: &[EpisodeRow]) -> f64 {
    rows.iter().map(|r| r.distance_flown).sum::<f64>() / rows.len() as f64
}

pub fn save_policy(path: &Path, policy: &NetPolicy) -> Result<()> {
    net::save_checkpoint(path, &policy.net, &serde_json::to_string(&policy.meta)?)
}

pub fn load_policy(path: &Path) -> Result<NetPolicy> {
    let ck = net::load_checkpoint(path)?;
    let meta: PolicyMeta = serde_json::from_str(&ck.metadata).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    NetPolicy::new(ck.network, meta)
}

/// Supervised pretraining followed by the λ=0 continuation: the same step
/// budget every learned policy gets.
fn supervised_pipeline(cfg: &ExperimentConfig, data: &LabeledData, classes: usize) -> Result<Network> {
    let init = net::init_network(&net::default_architecture(NET_INPUT_WIDTH, classes), rng::derive(cfg.seeds.training, &[0]))?;
    let pre = dan::train_supervised(&init, data, &cfg.pretrain())?.0;
    Ok(dan::train_supervised(&pre, data, &cfg.adapt(0.0))?.0)
}

/// Run the full pipeline, writing artifacts into `out` as each stage
/// finishes:
/// `config.toml`, `checkpoints/*.ckpt`, `validation.csv`, `dan_history.csv`,
/// `episodes.csv`, `summary.csv`, `report.json`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Report> {
    stage("config", cfg.validate())?;
    let ckpt_dir = out.join("checkpoints");
    stage("config", fs::create_dir_all(&ckpt_dir).map_err(Error::from))?;
    stage("config", cfg.to_toml().and_then(|t| Ok(fs::write(out.join("config.toml"), t)?)))?;
    let sc = stage("config", cfg.scenario())?;
    let (src, tgt) = (sc.source.env("source"), sc.target.env("target"));
    let ckpt = |name: &str| -> PathBuf { ckpt_dir.join(format!("{name}.ckpt")) };
    let rel = |name: &str| format!("checkpoints/{name}.ckpt");

    let demos: Dataset = stage("source_demos", {
        let seed = rng::derive(cfg.seeds.world, &[1]);
        match cfg.demo_method {
            DemoMethod::BehaviorClone => imitation::behavior_clone(&src, &cfg.expert, cfg.demo_meters, seed),
            DemoMethod::Dagger => net::init_network(
                &net::default_architecture(NET_INPUT_WIDTH, src.label_space.classes()),
                rng::derive(cfg.seeds.training, &[0]),
            )
            .and_then(|init| imitation::dagger(&src, &cfg.expert, &init, &cfg.dagger(), &cfg.pretrain(), seed))
            .map(|o| o.dataset),
        }
    })?;
    let labeled = stage("source_demos", demos.to_labeled(NET_INPUT_WIDTH))?;
    let target_x = stage(
        "target_scans",
        imitation::random_scans(&tgt, cfg.target_scans, rng::derive(cfg.seeds.world, &[2])).map(|d| d.inputs(NET_INPUT_WIDTH)),
    )?;

    let meta = PolicyMeta {
        label_space: src.label_space,
        v_max: src.v_max(),
        input_width: NET_INPUT_WIDTH,
    };
    let init = stage(
        "pretrain",
        net::init_network(
            &net::default_architecture(NET_INPUT_WIDTH, src.label_space.classes()),
            rng::derive(cfg.seeds.training, &[0]),
        ),
    )?;
    let pre = stage("pretrain", dan::train_supervised(&init, &labeled, &cfg.pretrain()).map(|r| r.0))?;

    // λ = 0 continuation; bitwise the λ = 0 member of the DAN family
    let source_only = stage(
        "source_only",
        dan::train_supervised(&pre, &labeled, &cfg.adapt(0.0)).and_then(|(n, _)| NetPolicy::new(n, meta.clone())),
    )?;
    stage("source_only", save_policy(&ckpt("source_only"), &source_only))?;

    let max_dist = cfg.episode_meters();
    let mut validation = Vec::new();
    let mut best: Option<(f64, f64, NetPolicy, dan::TrainHistory)> = None;
    for &lambda in &cfg.lambda_grid {
        let (n, hist) = stage("dan", dan::train_dan(&pre, &labeled, target_x.view(), &cfg.adapt(lambda)))?;
        let policy = stage("dan", NetPolicy::new(n, meta.clone()))?;
        let rows = stage(
            "validation",
            evaluate(&tgt, cfg.n_validation_worlds, cfg.seeds.validation, max_dist, |_| policy.clone()),
        )?;
        let score = mean_distance(&rows);
        validation.push((lambda, score));
        // ties keep the smaller λ
        if best.as_ref().is_none_or(|b| score > b.1) {
            best = Some((lambda, score, policy, hist));
        }
    }
    let (lambda, _, dan_policy, history) = best.expect("non-empty grid");
    stage("dan", save_policy(&ckpt("dan_adapted"), &dan_policy))?;
    stage("dan", Ok(fs::write(out.join("dan_history.csv"), history.to_csv())?))?;
    stage("validation", Ok(fs::write(out.join("validation.csv"), report::validation_csv(&validation))?))?;

    let oracle = stage("target_oracle", {
        imitation::behavior_clone(&tgt, &cfg.expert, cfg.oracle_meters, rng::derive(cfg.seeds.world, &[3]))
            .and_then(|d| d.to_labeled(NET_INPUT_WIDTH))
            .and_then(|d| supervised_pipeline(cfg, &d, tgt.label_space.classes()))
            .and_then(|n| {
                NetPolicy::new(
                    n,
                    PolicyMeta {
                        label_space: tgt.label_space,
                        v_max: tgt.v_max(),
                        input_width: NET_INPUT_WIDTH,
                    },
                )
            })
    })?;
    stage("target_oracle", save_policy(&ckpt("target_oracle"), &oracle))?;

    let (n, seed) = (cfg.n_eval_worlds, cfg.seeds.eval);
    let episodes = stage("evaluate", {
        let mut all = Vec::new();
        let run = |kind: PolicyKind, rows: Result<Vec<EpisodeRow>>| rows.map(|r| (kind, r));
        all.push(run(PolicyKind::Random, evaluate(&tgt, n, seed, max_dist, random_policy(tgt.v_max())))?);
        for (kind, p) in [
            (PolicyKind::SourceOnly, &source_only),
            (PolicyKind::DanAdapted, &dan_policy),
            (PolicyKind::TargetOracle, &oracle),
        ] {
            all.push(run(kind, evaluate(&tgt, n, seed, max_dist, |_| p.clone()))?);
        }
        Ok(all)
    })?;

    let report = Report::new(
        &cfg.scenario,
        stage("report", cfg.density_regime())?,
        lambda,
        validation,
        episodes
            .into_iter()
            .map(|(kind, rows)| {
                let path = (kind != PolicyKind::Random).then(|| rel(kind.name()));
                (kind, path, rows)
            })
            .collect(),
    );
    stage("report", report.write(out))?;
    Ok(report)
}
