use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_collision, render_scan, step, DomainConfig, DroneState, ForestWorld};
use crate::rng;

/// What a controller sees at one tick. Learners must only read `scan`.
pub struct TickView<'a> {
    pub tick: u64,
    pub state: &'a DroneState,
    pub scan: &'a [f64],
    pub world: &'a ForestWorld,
}

/// Monocular controller: scan in, lateral velocity command out.
pub trait ScanPolicy {
    fn act(&mut self, scan: &[f64]) -> f64;
}

impl<F: FnMut(&[f64]) -> f64> ScanPolicy for F {
    fn act(&mut self, scan: &[f64]) -> f64 {
        self(scan)
    }
}

/// Uniform command in `[−v_max, v_max]` every tick.
pub struct RandomPolicy {
    v_max: f64,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(v_max: f64, seed: u64) -> Self {
        Self {
            v_max,
            rng: rng::derived(seed, &[rng::STREAM_POLICY]),
        }
    }
}

impl ScanPolicy for RandomPolicy {
    fn act(&mut self, _scan: &[f64]) -> f64 {
        self.rng.random_range(-self.v_max..=self.v_max)
    }
}

pub struct ZeroPolicy;

impl ScanPolicy for ZeroPolicy {
    fn act(&mut self, _scan: &[f64]) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub distance_flown: f64,
    pub crashed: bool,
    pub trees_passed: usize,
    pub trees_hit: usize,
    /// State after each tick.
    pub trajectory: Vec<DroneState>,
    /// Command issued at each tick (after clamping).
    pub commands: Vec<f64>,
}

impl EpisodeResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tick,x,y,v_lat,command,crashed\n");
        for (s, c) in self.trajectory.iter().zip(&self.commands) {
            let _ = writeln!(out, "{},{},{},{},{},{}", s.tick, s.x, s.y, s.v_lat, c, u8::from(!s.alive));
        }
        out
    }
}

/// Seed of tick `tick` within an episode.
pub fn tick_seed(episode_seed: u64, tick: u64) -> u64 {
    rng::derive(episode_seed, &[tick])
}

/// Fly from the start pose until a crash or until `y ≥ max_dist`, asking
/// `control` for a command every tick.
pub fn fly<F>(world: &ForestWorld, cfg: &DomainConfig, max_dist: f64, seed: u64, mut control: F) -> EpisodeResult
where
    F: FnMut(&TickView<'_>) -> f64,
{
    let dyn_cfg = &cfg.dynamics;
    let max_dist = max_dist.min(world.params.length);
    let mut state = DroneState::start();
    let mut trajectory = Vec::new();
    let mut commands = Vec::new();
    let mut crashed = false;
    while state.y < max_dist {
        let ts = tick_seed(seed, state.tick);
        let scan = render_scan(world, &state, cfg, ts);
        let view = TickView {
            tick: state.tick,
            state: &state,
            scan: &scan,
            world,
        };
        let command = control(&view).clamp(-dyn_cfg.v_max, dyn_cfg.v_max);
        let mut next = step(&state, command, dyn_cfg, ts);
        if next.y < max_dist && check_collision(world, &next, dyn_cfg.drone_radius) {
            next.alive = false;
            crashed = true;
        }
        trajectory.push(next);
        commands.push(command);
        state = next;
        if crashed {
            break;
        }
    }
    let distance_flown = state.y.min(max_dist);
    let alive_y = if crashed {
        trajectory.len().checked_sub(2).map_or(0.0, |i| trajectory[i].y)
    } else {
        distance_flown
    };
    let trees_passed = world.trees.partition_point(|t| t.y < alive_y);
    EpisodeResult {
        distance_flown,
        crashed,
        trees_passed,
        trees_hit: usize::from(crashed),
        trajectory,
        commands,
    }
}

/// Evaluation rollout of a monocular policy.
pub fn run_episode<P: ScanPolicy + ?Sized>(
    policy: &mut P,
    world: &ForestWorld,
    cfg: &DomainConfig,
    max_dist: f64,
    seed: u64,
) -> EpisodeResult {
    fly(world, cfg, max_dist, seed, |v| policy.act(v.scan))
}
