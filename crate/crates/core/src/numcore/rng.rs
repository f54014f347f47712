//! Deterministic random streams.
//!
//! Every random draw in the crate comes from ChaCha8 seeded with the run seed
//! and a per-purpose stream number, so changing how one component consumes
//! randomness never shifts another component's draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tensor::Tensor2D;

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Synthetic = 1,
    Episode = 2,
    TeacherInit = 3,
    Jitter = 4,
    Validation = 5,
    Testing = 99,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| gaussian(rng)).collect()
}

/// Uniform entries in `[-bound, bound]`.
pub fn uniform_tensor(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Tensor2D {
    Tensor2D::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

pub fn gaussian_tensor(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Tensor2D {
    Tensor2D::from_fn(rows, cols, |_, _| std * gaussian(rng))
}
