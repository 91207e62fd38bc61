//! Named source/target domain pairs.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::imitation::{Env, LabelSpace};
use crate::sim::{DomainConfig, WorldParams};

pub const SCHEMA_VERSION: u32 = 1;
pub const SCENARIO_NAMES: [&str; 4] = ["systems", "weather", "environment", "sanity_gamma"];

pub const LOW_DENSITY: f64 = 1.0 / 36.0;
pub const HIGH_DENSITY: f64 = 1.0 / 9.0;

/// Tree radius range before the domain's radius scale is applied.
pub const BASE_RADIUS: [f64; 2] = [0.15, 0.4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub config: DomainConfig,
    pub density: f64,
    pub label_space: LabelSpace,
}

impl DomainSpec {
    pub fn world_params(&self) -> WorldParams {
        let s = self.config.appearance.radius_scale;
        WorldParams {
            density: self.density,
            radius_min: BASE_RADIUS[0] * s,
            radius_max: BASE_RADIUS[1] * s,
            drone_radius: self.config.dynamics.drone_radius,
            ..WorldParams::default()
        }
    }

    pub fn env(&self, tag: &str) -> Env {
        Env {
            domain: self.config.clone(),
            world: self.world_params(),
            label_space: self.label_space,
            tag: tag.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub source: DomainSpec,
    pub target: DomainSpec,
    pub notes: String,
}

impl Scenario {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        if s.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!("unsupported scenario schema version {}", s.schema_version)));
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.source.config.validate()?;
        self.target.config.validate()?;
        self.source.label_space.validate()?;
        self.target.label_space.validate()?;
        if self.source == self.target {
            return Err(invalid("source and target domains are identical"));
        }
        Ok(())
    }
}

fn fine() -> LabelSpace {
    LabelSpace::Fine { bins: 9 }
}

fn low(config: DomainConfig) -> DomainSpec {
    DomainSpec {
        config,
        density: LOW_DENSITY,
        label_space: fine(),
    }
}

pub fn build_scenario(name: &str) -> Result<Scenario> {
    let base = DomainConfig::default();
    let (source, target, notes) = match name {
        "systems" => {
            let mut s = base.clone();
            s.sensor.width = 64;
            s.sensor.rolling_skew = 2.0;
            s.sensor.noise_std = 0.03;
            s.dynamics.tau = 0.35;
            s.dynamics.wind_std = 0.08;
            let mut t = base;
            t.sensor.width = 96;
            t.sensor.rolling_skew = 0.0;
            t.sensor.noise_std = 0.01;
            t.dynamics.tau = 0.15;
            t.dynamics.wind_std = 0.03;
            (
                low(s),
                low(t),
                "rolling-shutter, low-resolution, sluggish airframe to global-shutter, higher-resolution, stiff airframe",
            )
        }
        "weather" => {
            let mut s = base.clone();
            s.appearance.background = 0.55;
            s.appearance.tree_intensity = [0.15, 0.35];
            s.appearance.clutter_rate = 0.5;
            s.appearance.clutter_intensity = 0.3;
            let mut t = base;
            t.appearance.background = 0.9;
            t.appearance.tree_intensity = [0.25, 0.4];
            t.appearance.radius_scale = 0.7;
            t.appearance.clutter_rate = 0.05;
            t.appearance.clutter_intensity = 0.95;
            (
                low(s),
                low(t),
                "foliage on a mid-grey background to bare thin trunks on snow",
            )
        }
        "environment" => {
            let s = DomainSpec {
                config: base.clone(),
                density: LOW_DENSITY,
                label_space: LabelSpace::Coarse3,
            };
            let mut t = base;
            t.appearance.background = 0.5;
            t.appearance.tree_intensity = [0.1, 0.3];
            t.appearance.clutter_rate = 0.3;
            let t = DomainSpec {
                config: t,
                density: HIGH_DENSITY,
                label_space: fine(),
            };
            (
                s,
                t,
                "sparse forest with left/centre/right labels to a dense forest whose fine labels are withheld",
            )
        }
        "sanity_gamma" => {
            let mut t = base.clone();
            t.sensor.gamma = 2.2;
            t.sensor.invert = true;
            (
                low(base),
                low(t),
                "target scans are the source scans under a gamma warp and intensity inversion",
            )
        }
        other => {
            return Err(invalid(format!(
                "unknown scenario `{other}` (expected one of {})",
                SCENARIO_NAMES.join(", ")
            )))
        }
    };
    let s = Scenario {
        schema_version: SCHEMA_VERSION,
        name: name.to_string(),
        source,
        target,
        notes: notes.to_string(),
    };
    s.validate()?;
    Ok(s)
}

pub fn all_scenarios() -> Vec<Scenario> {
    SCENARIO_NAMES
        .iter()
        .map(|n| build_scenario(n).expect("catalog entries are valid"))
        .collect()
}
