//! Seed derivation. Every random stream in the crate comes from an explicit
//! `u64` seed mixed with a stream label, so runs never touch wall-clock entropy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a sequence of labels.
pub fn derive(seed: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(mix64(seed), |acc, &l| mix64(acc ^ mix64(l.wrapping_add(0xA5A5_A5A5))))
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived(seed: u64, labels: &[u64]) -> ChaCha8Rng {
    seeded(derive(seed, labels))
}

// Stream labels.
pub const STREAM_RENDER: u64 = 1;
pub const STREAM_DYNAMICS: u64 = 2;
pub const STREAM_WORLD: u64 = 3;
pub const STREAM_POLICY: u64 = 4;
pub const STREAM_MIXING: u64 = 5;
pub const STREAM_SOURCE_BATCH: u64 = 6;
pub const STREAM_TARGET_BATCH: u64 = 7;
