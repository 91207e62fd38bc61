use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{DomainConfig, DroneState, ForestWorld};
use crate::rng;

/// Ground footprint each pixel samples for clutter speckle, in m².
const CLUTTER_FOOTPRINT: f64 = 0.5;

/// Bearing of pixel `p`, measured from +y, negative to the left.
/// Pixel centres are placed so that `θ(W−1−p) = −θ(p)` exactly.
pub(crate) fn pixel_angle(p: usize, width: usize, fov_deg: f64) -> f64 {
    let k = (2 * p + 1) as f64 - width as f64;
    k / (2 * width) as f64 * fov_deg.to_radians()
}

/// `(sin θ, cos θ)` computed from `|θ|` so that mirrored bearings give exactly
/// negated lateral components.
fn ray_dir(theta: f64) -> (f64, f64) {
    let s = theta.abs().sin();
    (if theta < 0.0 { -s } else { s }, theta.abs().cos())
}

/// Distance to the nearest surface along the ray and that surface's intensity.
fn cast(world: &ForestWorld, ox: f64, oy: f64, dx: f64, dy: f64, cfg: &DomainConfig) -> Option<(f64, f64)> {
    let range = cfg.sensor.max_range;
    let [lo, hi] = cfg.appearance.tree_intensity;
    let mut best: Option<(f64, f64)> = None;
    let r_max = world.max_radius();
    for t in world.trees_in_band(oy - r_max, oy + range + r_max) {
        let (fx, fy) = (t.x - ox, t.y - oy);
        let along = fx * dx + fy * dy;
        if along <= 0.0 {
            continue;
        }
        let perp2 = fx * fx + fy * fy - along * along;
        let r2 = t.radius * t.radius;
        if perp2 >= r2 {
            continue;
        }
        let d = along - (r2 - perp2).sqrt();
        if d > 0.0 && d <= range && best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, lo + t.appearance * (hi - lo)));
        }
    }
    let hw = world.params.half_width;
    if dx != 0.0 {
        let d = if dx > 0.0 { (hw - ox) / dx } else { (-hw - ox) / dx };
        if d > 0.0 && d <= range && best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, cfg.appearance.wall_intensity));
        }
    }
    best
}

/// Render the 1D scan seen from `state`. Pixel 0 is the leftmost bearing.
pub fn render_scan(world: &ForestWorld, state: &DroneState, cfg: &DomainConfig, tick_seed: u64) -> Vec<f64> {
    let s = &cfg.sensor;
    let a = &cfg.appearance;
    let w = s.width;
    let mut rng = rng::derived(tick_seed, &[rng::STREAM_RENDER]);
    let p_clutter = 1.0 - (-a.clutter_rate * CLUTTER_FOOTPRINT).exp();
    let noise = (s.noise_std > 0.0).then(|| Normal::new(0.0, s.noise_std).expect("finite std"));
    (0..w)
        .map(|p| {
            let (dx, dy) = ray_dir(pixel_angle(p, w, s.fov_deg));
            let skew = s.rolling_skew * ((p as f64 + 0.5) / w as f64 - 0.5) * state.v_lat;
            let mut v = match cast(world, state.x + skew, state.y, dx, dy, cfg) {
                Some((d, intensity)) => intensity / (1.0 + s.attenuation * d),
                None => a.background,
            };
            if p_clutter > 0.0 && rng.random::<f64>() < p_clutter {
                v = a.clutter_intensity;
            }
            if let Some(n) = &noise {
                v += n.sample(&mut rng);
            }
            v = v.clamp(0.0, 1.0);
            if s.gamma != 1.0 {
                v = v.powf(1.0 / s.gamma);
            }
            if s.invert {
                v = 1.0 - v;
            }
            v.clamp(0.0, 1.0)
        })
        .collect()
}
