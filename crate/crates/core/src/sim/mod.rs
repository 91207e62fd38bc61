//! 2D cluttered-corridor flight: the drone flies along +y at constant speed
//! and only controls its lateral velocity. Trees are discs; the camera is a
//! 1D strip of `W` pixels looking downrange.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng;

mod episode;
mod expert;
mod render;
mod world;

pub use episode::{fly, run_episode, tick_seed, EpisodeResult, RandomPolicy, ScanPolicy, TickView, ZeroPolicy};
pub use expert::{expert_policy, ExpertConfig};
pub use render::render_scan;
pub use world::{generate_world, ForestWorld, Tree, WorldParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub width: usize,
    pub fov_deg: f64,
    pub noise_std: f64,
    pub gamma: f64,
    /// Lateral pose offset across the strip, in meters per (m/s) of lateral
    /// velocity, edge to edge.
    pub rolling_skew: f64,
    pub invert: bool,
    /// Rays travelling farther than this see the background.
    pub max_range: f64,
    /// Per-meter attenuation `1/(1 + a·d)` of tree and wall intensity.
    pub attenuation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppearanceConfig {
    pub background: f64,
    pub tree_intensity: [f64; 2],
    /// Speckle events per m² of ground; each pixel samples a 0.5 m² footprint.
    pub clutter_rate: f64,
    pub clutter_intensity: f64,
    pub wall_intensity: f64,
    /// Physical scale applied to tree radii when worlds are generated.
    pub radius_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub forward_speed: f64,
    pub tau: f64,
    pub wind_std: f64,
    pub control_rate_hz: f64,
    pub v_max: f64,
    pub drone_radius: f64,
}

impl DynamicsConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.control_rate_hz
    }

    /// Downrange advance per tick.
    pub fn dy(&self) -> f64 {
        self.forward_speed / self.control_rate_hz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    pub sensor: SensorConfig,
    pub appearance: AppearanceConfig,
    pub dynamics: DynamicsConfig,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            sensor: SensorConfig {
                width: 64,
                fov_deg: 90.0,
                noise_std: 0.02,
                gamma: 1.0,
                rolling_skew: 0.0,
                invert: false,
                max_range: 20.0,
                attenuation: 0.05,
            },
            appearance: AppearanceConfig {
                background: 0.55,
                tree_intensity: [0.15, 0.35],
                clutter_rate: 0.2,
                clutter_intensity: 0.3,
                wall_intensity: 0.8,
                radius_scale: 1.0,
            },
            dynamics: DynamicsConfig {
                forward_speed: 1.5,
                tau: 0.25,
                wind_std: 0.05,
                control_rate_hz: 15.0,
                v_max: 1.0,
                drone_radius: 0.25,
            },
        }
    }
}

impl DomainConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.sensor;
        let a = &self.appearance;
        let d = &self.dynamics;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if s.width < 8 {
            return Err(invalid(format!("sensor width must be ≥ 8, got {}", s.width)));
        }
        if !(s.fov_deg > 10.0 && s.fov_deg < 180.0) {
            return Err(invalid(format!("fov must lie in (10, 180) degrees, got {}", s.fov_deg)));
        }
        if !(s.noise_std >= 0.0 && s.gamma > 0.0 && s.max_range > 0.0 && s.attenuation >= 0.0) {
            return Err(invalid("sensor noise, gamma, range or attenuation out of range"));
        }
        if !s.rolling_skew.is_finite() {
            return Err(invalid("rolling skew must be finite"));
        }
        let [lo, hi] = a.tree_intensity;
        if !(unit(a.background) && unit(lo) && unit(hi) && lo <= hi && unit(a.clutter_intensity) && unit(a.wall_intensity)) {
            return Err(invalid("appearance intensities must lie in [0, 1]"));
        }
        if !(a.clutter_rate >= 0.0 && a.radius_scale > 0.0) {
            return Err(invalid("clutter rate must be ≥ 0 and radius scale > 0"));
        }
        if !(d.tau > 0.0 && d.control_rate_hz > 0.0 && d.forward_speed > 0.0) {
            return Err(invalid("tau, control rate and forward speed must be positive"));
        }
        if !(d.wind_std >= 0.0 && d.v_max > 0.0 && d.drone_radius > 0.0) {
            return Err(invalid("wind std, v_max or drone radius out of range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneState {
    pub x: f64,
    pub y: f64,
    pub v_lat: f64,
    pub alive: bool,
    /// Ticks flown; `y` is always `tick · dy` so downrange progress is exact.
    pub tick: u64,
}

impl DroneState {
    pub fn start() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            v_lat: 0.0,
            alive: true,
            tick: 0,
        }
    }

    pub fn mirrored(&self) -> Self {
        Self {
            x: -self.x,
            v_lat: -self.v_lat,
            ..*self
        }
    }
}

/// One control tick of first-order lateral dynamics plus a wind gust.
pub fn step(state: &DroneState, command: f64, cfg: &DynamicsConfig, tick_seed: u64) -> DroneState {
    let dt = cfg.dt();
    let command = command.clamp(-cfg.v_max, cfg.v_max);
    let mut v = state.v_lat + (dt / cfg.tau) * (command - state.v_lat);
    if cfg.wind_std > 0.0 {
        let gust = Normal::new(0.0, cfg.wind_std).expect("finite std");
        v += gust.sample(&mut rng::derived(tick_seed, &[rng::STREAM_DYNAMICS]));
    }
    let tick = state.tick + 1;
    DroneState {
        x: state.x + v * dt,
        y: tick as f64 * cfg.dy(),
        v_lat: v,
        alive: state.alive,
        tick,
    }
}

/// Strict overlap with any tree or with a corridor wall.
pub fn check_collision(world: &ForestWorld, state: &DroneState, r_drone: f64) -> bool {
    if state.x.abs() > world.params.half_width - r_drone {
        return true;
    }
    world.trees_in_band(state.y - world.max_radius() - r_drone, state.y + world.max_radius() + r_drone)
        .iter()
        .any(|t| {
            let (dx, dy) = (state.x - t.x, state.y - t.y);
            let reach = t.radius + r_drone;
            dx * dx + dy * dy < reach * reach
        })
}
