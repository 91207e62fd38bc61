use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

/// Extra clearance between two trees beyond the drone's diameter.
pub const GAP_SLACK: f64 = 0.2;
const MAX_ATTEMPTS_PER_TREE: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    /// Trees per m².
    pub density: f64,
    pub half_width: f64,
    pub length: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub drone_radius: f64,
    /// No tree starts closer than this to `y = 0`.
    pub start_clear: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            density: 1.0 / 36.0,
            half_width: 10.0,
            length: 200.0,
            radius_min: 0.15,
            radius_max: 0.4,
            drone_radius: 0.25,
            start_clear: 3.0,
        }
    }
}

impl WorldParams {
    pub fn area(&self) -> f64 {
        2.0 * self.half_width * self.length
    }

    pub fn min_separation(&self, r_i: f64, r_j: f64) -> f64 {
        r_i + r_j + 2.0 * self.drone_radius + GAP_SLACK
    }

    fn validate(&self) -> Result<()> {
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(invalid(format!("density must be positive, got {}", self.density)));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return Err(invalid("tree radii must satisfy 0 < min ≤ max"));
        }
        if !(self.drone_radius > 0.0 && self.start_clear >= 0.0 && self.length > self.start_clear) {
            return Err(invalid("drone radius, start clearance or length out of range"));
        }
        if self.half_width <= self.radius_max + self.drone_radius {
            return Err(invalid("corridor too narrow for the tree and drone radii"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    /// Position of this tree's shade inside the domain's intensity range.
    pub appearance: f64,
}

/// Tree field sorted by downrange position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestWorld {
    pub seed: u64,
    pub params: WorldParams,
    pub trees: Vec<Tree>,
}

impl ForestWorld {
    /// Build from an explicit tree list; trees are re-sorted by `y`.
    pub fn new(seed: u64, params: WorldParams, mut trees: Vec<Tree>) -> Result<Self> {
        params.validate()?;
        for t in &trees {
            let ok = t.radius > 0.0
                && t.x.abs() <= params.half_width - t.radius
                && (0.0..=params.length).contains(&t.y)
                && (0.0..=1.0).contains(&t.appearance);
            if !ok {
                return Err(invalid(format!("tree at ({}, {}) violates corridor bounds", t.x, t.y)));
            }
        }
        sort_trees(&mut trees);
        Ok(Self { seed, params, trees })
    }

    pub fn empty(params: WorldParams) -> Result<Self> {
        Self::new(0, params, Vec::new())
    }

    pub fn max_radius(&self) -> f64 {
        self.trees.iter().map(|t| t.radius).fold(0.0, f64::max)
    }

    /// Trees whose centre lies in `[y_lo, y_hi]`.
    pub fn trees_in_band(&self, y_lo: f64, y_hi: f64) -> &[Tree] {
        let a = self.trees.partition_point(|t| t.y < y_lo);
        let b = self.trees.partition_point(|t| t.y <= y_hi);
        &self.trees[a..b.max(a)]
    }

    /// First pair violating the minimum separation, if any.
    pub fn separation_violation(&self) -> Option<(usize, usize)> {
        for i in 0..self.trees.len() {
            for j in i + 1..self.trees.len() {
                let (a, b) = (&self.trees[i], &self.trees[j]);
                let need = self.params.min_separation(a.radius, b.radius);
                if b.y - a.y >= need {
                    break;
                }
                if (a.x - b.x).hypot(a.y - b.y) < need {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Reflect across `x = 0`.
    pub fn mirrored(&self) -> Self {
        let mut trees: Vec<Tree> = self.trees.iter().map(|t| Tree { x: -t.x, ..*t }).collect();
        sort_trees(&mut trees);
        Self {
            seed: self.seed,
            params: self.params.clone(),
            trees,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ForestWorld = serde_json::from_str(text)?;
        Self::new(raw.seed, raw.params, raw.trees)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn sort_trees(trees: &mut [Tree]) {
    trees.sort_by(|a, b| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)));
}

/// Uniform rejection placement of `round(density · area)` trees.
pub fn generate_world(params: &WorldParams, seed: u64) -> Result<ForestWorld> {
    params.validate()?;
    let count = (params.density * params.area()).round() as usize;
    let mut rng = rng::derived(seed, &[rng::STREAM_WORLD]);
    // Bucket by 1 m of downrange so the separation check stays local.
    let reach = params.min_separation(params.radius_max, params.radius_max);
    let n_buckets = params.length.ceil() as usize + 1;
    let mut buckets: Vec<Vec<Tree>> = vec![Vec::new(); n_buckets];
    let bucket_of = |y: f64| (y.max(0.0) as usize).min(n_buckets - 1);
    let span = reach.ceil() as usize;
    let mut placed = 0usize;
    for _ in 0..count {
        let mut done = false;
        for _ in 0..MAX_ATTEMPTS_PER_TREE {
            let radius = rng.random_range(params.radius_min..=params.radius_max);
            let x_lim = params.half_width - radius;
            let x = rng.random_range(-x_lim..=x_lim);
            let y = rng.random_range(params.start_clear..=params.length);
            let appearance: f64 = rng.random();
            let b = bucket_of(y);
            let clear = (b.saturating_sub(span)..=(b + span).min(n_buckets - 1))
                .flat_map(|k| buckets[k].iter())
                .all(|t| (t.x - x).hypot(t.y - y) >= params.min_separation(t.radius, radius));
            if clear {
                buckets[b].push(Tree { x, y, radius, appearance });
                placed += 1;
                done = true;
                break;
            }
        }
        if !done {
            return Err(Error::InfeasibleDensity {
                placed,
                requested: count,
                attempts: MAX_ATTEMPTS_PER_TREE,
            });
        }
    }
    let mut trees: Vec<Tree> = buckets.into_iter().flatten().collect();
    sort_trees(&mut trees);
    Ok(ForestWorld {
        seed,
        params: params.clone(),
        trees,
    })
}
