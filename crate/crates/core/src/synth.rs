//! Seeded synthetic operands. Everything here is a pure function of the
//! seed, so benchmark workloads and test instances are reproducible.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::quant::QuantMatrixQ4;

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn gaussian(rng: &mut SeededRng, n: usize, std_dev: f32) -> Vec<f32> {
    let dist = Normal::new(0.0f32, std_dev).expect("std_dev must be finite and non-negative");
    (0..n).map(|_| dist.sample(rng)).collect()
}

pub fn uniform(rng: &mut SeededRng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Gaussian `rows x cols` matrix quantized to Q4.
pub fn gaussian_q4(rng: &mut SeededRng, rows: usize, cols: usize, std_dev: f32) -> Result<QuantMatrixQ4> {
    QuantMatrixQ4::quantize(rows, cols, &gaussian(rng, rows * cols, std_dev))
}
