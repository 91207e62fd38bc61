//! Two-class 2-D Gaussian problem with a sign-flip domain shift.
//!
//! Source features are drawn from two isotropic Gaussians; target features
//! are drawn the same way and then negated. The class means are not
//! symmetric about the origin, so the flipped target occupies a region the
//! source never covers.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dan::{DanConfig, LabeledData};
use crate::net::{LayerSpec, RoleMultipliers, Role};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignFlipProblem {
    pub mean0: [f64; 2],
    pub mean1: [f64; 2],
    pub std: f64,
    /// Probability of class 0.
    pub prior0: f64,
}

impl Default for SignFlipProblem {
    fn default() -> Self {
        Self {
            mean0: [1.0, 1.0],
            mean1: [3.0, 1.0],
            std: 0.4,
            prior0: 0.5,
        }
    }
}

impl SignFlipProblem {
    fn draw(&self, n: usize, seed: u64, flip: bool) -> LabeledData {
        let mut rng = rng::seeded(seed);
        let noise = Normal::new(0.0, self.std).expect("positive std");
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let class = usize::from(rng.random::<f64>() >= self.prior0);
            let mean = if class == 0 { self.mean0 } else { self.mean1 };
            for k in 0..2 {
                let v = mean[k] + noise.sample(&mut rng);
                x[[i, k]] = if flip { -v } else { v };
            }
            y.push(class);
        }
        LabeledData::new(x, y).expect("matched lengths")
    }

    /// Labeled source sample.
    pub fn source(&self, n: usize, seed: u64) -> LabeledData {
        self.draw(n, seed, false)
    }

    /// Target sample (labels kept only for scoring).
    pub fn target(&self, n: usize, seed: u64) -> LabeledData {
        self.draw(n, seed, true)
    }
}

/// `dense(2→16) → relu → dense(16→16) → relu → dense(16→2) → softmax`, with the
/// last two dense layers in the adapt role (indices 2 and 4).
pub fn toy_architecture() -> Vec<LayerSpec> {
    vec![
        LayerSpec::dense(2, 16, Role::Finetune),
        LayerSpec::relu(),
        LayerSpec::dense(16, 16, Role::Adapt),
        LayerSpec::relu(),
        LayerSpec::dense(16, 2, Role::Adapt),
        LayerSpec::softmax(),
    ]
}

pub fn toy_config(lambda: f64, steps: usize, seed: u64) -> DanConfig {
    DanConfig {
        lambda,
        batch_size: 32,
        steps,
        base_lr: 0.05,
        role_multipliers: RoleMultipliers {
            frozen: 0.0,
            finetune: 1.0,
            adapt: 1.0,
        },
        adapt_layers: (2, 4),
        bank_policy: crate::dan::BankPolicy::MedianPerBatch,
        seed,
    }
}
