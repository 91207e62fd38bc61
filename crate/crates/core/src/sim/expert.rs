use serde::{Deserialize, Serialize};

use super::{check_collision, step, DroneState, DynamicsConfig, ForestWorld};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    /// Downrange window whose trees are projected onto the lateral axis.
    pub lookahead: f64,
    /// Proportional gain, 1/s.
    pub gain: f64,
    /// Extra lateral clearance added around every obstacle.
    pub margin: f64,
    /// Gaps wider than this count as equally good; the drone then aims at
    /// the nearest `width_cap`-wide slice of the gap.
    pub width_cap: f64,
    /// When set, gaps are computed only from trees at least partly inside
    /// this horizontal field of view (degrees), so labels depend on what the
    /// camera can see. Survival checks still use every tree.
    pub field_of_view: Option<f64>,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            lookahead: 4.0,
            gain: 0.8,
            margin: 0.1,
            width_cap: 2.0,
            field_of_view: None,
        }
    }
}

/// Free lateral intervals left after projecting every tree within
/// `lookahead` of the drone, each widened by the drone radius and margin.
fn free_gaps(world: &ForestWorld, state: &DroneState, lookahead: f64, r_drone: f64, cfg: &ExpertConfig) -> Vec<(f64, f64)> {
    let margin = cfg.margin;
    let half_fov = cfg.field_of_view.map(|f| f.to_radians() / 2.0);
    let r_max = world.max_radius();
    let pad = r_drone + margin;
    let mut blocked: Vec<(f64, f64)> = world
        .trees_in_band(state.y - r_max - r_drone, state.y + lookahead + r_max + r_drone)
        .iter()
        .filter(|t| t.y + t.radius + r_drone > state.y && t.y - t.radius - r_drone < state.y + lookahead)
        .filter(|t| match half_fov {
            None => true,
            Some(h) => {
                let (dx, dy) = ((t.x - state.x).abs(), t.y - state.y);
                let dist = dx.hypot(dy);
                dist > t.radius && dx.atan2(dy) - (t.radius / dist).asin() < h
            }
        })
        .map(|t| (t.x - (t.radius + pad), t.x + (t.radius + pad)))
        .collect();
    blocked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let lim = world.params.half_width - pad;
    let mut gaps = Vec::new();
    let mut cursor = -lim;
    for (lo, hi) in blocked {
        if lo > cursor {
            gaps.push((cursor, lo.min(lim)));
        }
        cursor = cursor.max(hi);
        if cursor >= lim {
            break;
        }
    }
    if cursor < lim {
        gaps.push((cursor, lim));
    }
    gaps.retain(|(a, b)| b > a);
    gaps
}

/// Lateral target inside gap `(a, b)`: the centre of the `cap`-wide slice
/// nearest to `x` (the whole gap when it is narrower than `cap`).
fn gap_target(a: f64, b: f64, x: f64, cap: f64) -> f64 {
    if b - a <= cap {
        (a + b) / 2.0
    } else {
        let h = cap / 2.0;
        x.clamp(a + h, b - h)
    }
}

/// Ticks the drone survives while steering toward `target` with the
/// expert's gain, ignoring wind, inflated by `margin`.
fn survival(world: &ForestWorld, state: &DroneState, target: f64, cfg: &ExpertConfig, dynamics: &DynamicsConfig, horizon: usize) -> usize {
    let r = dynamics.drone_radius + cfg.margin;
    let calm = DynamicsConfig {
        wind_std: 0.0,
        ..dynamics.clone()
    };
    let mut s = *state;
    for k in 0..horizon {
        let c = (cfg.gain * (target - s.x)).clamp(-calm.v_max, calm.v_max);
        s = step(&s, c, &calm, 0);
        if check_collision(world, &s, r) {
            return k;
        }
    }
    horizon
}

/// Privileged pilot. Free gaps come from projecting the trees in the
/// lookahead window (shrunk when nothing is free). Each gap's target is
/// rolled out open-loop; among those that stay collision-free over the
/// window, the widest (capped) wins, ties going to the nearest. If none is
/// safe, the longest-surviving target wins.
pub fn expert_policy(world: &ForestWorld, state: &DroneState, cfg: &ExpertConfig, dynamics: &DynamicsConfig) -> f64 {
    let (r_drone, v_max) = (dynamics.drone_radius, dynamics.v_max);
    let horizon = (cfg.lookahead / dynamics.dy()).ceil() as usize;
    let mut lookahead = cfg.lookahead;
    let mut gaps = Vec::new();
    while lookahead >= 0.5 {
        gaps = free_gaps(world, state, lookahead, r_drone, cfg);
        if !gaps.is_empty() {
            break;
        }
        lookahead /= 2.0;
    }
    // ranked by survived ticks, then capped width, then nearness
    let mut best: Option<(usize, f64, f64, f64)> = None;
    let mut tied = false;
    for (a, b) in gaps {
        let target = gap_target(a, b, state.x, cfg.width_cap);
        let ticks = survival(world, state, target, cfg, dynamics, horizon);
        let width = (b - a).min(cfg.width_cap);
        let dist = (target - state.x).abs();
        match best {
            None => best = Some((ticks, width, dist, target)),
            Some((bt, bw, bd, _)) => {
                let better = ticks > bt || (ticks == bt && (width > bw || (width == bw && dist < bd)));
                if better {
                    best = Some((ticks, width, dist, target));
                    tied = false;
                } else if ticks == bt && width == bw && dist == bd {
                    tied = true;
                }
            }
        }
    }
    match best {
        Some((_, _, _, target)) if !tied => (cfg.gain * (target - state.x)).clamp(-v_max, v_max),
        _ => 0.0,
    }
}
