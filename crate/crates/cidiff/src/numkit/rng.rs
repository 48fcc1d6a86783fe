//! Counter-based splittable PRNG.
//!
//! Every randomness consumer in a run (data sampling, noise draws, condition
//! masking, ...) gets its own stream derived from the run seed and a purpose
//! tag. Streams are independent, so adding a consumer never perturbs the
//! draws of another — which is what makes paired-seed experiments (same data
//! and noise, different loss) meaningful.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Matrix;

/// SplitMix64 finalizer; good dispersion for seed derivation.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(base: u64, tag: u64) -> u64 {
    splitmix64(base ^ splitmix64(tag.wrapping_mul(0xA24B_AED4_963E_E407)))
}

/// Seedable, splittable random stream.
///
/// `derive(tag)` produces a child stream that is a pure function of
/// `(seed, tag)`: deterministic, and independent of how much the parent has
/// been consumed.
#[derive(Debug, Clone)]
pub struct Prng {
    base: u64,
    inner: ChaCha8Rng,
}

impl Prng {
    pub fn seed(seed: u64) -> Self {
        Prng {
            base: seed,
            inner: ChaCha8Rng::seed_from_u64(splitmix64(seed)),
        }
    }

    /// Child stream for a distinct purpose. Same `(seed, tag)` always yields
    /// the same stream.
    pub fn derive(&self, tag: u64) -> Prng {
        Prng::seed(mix(self.base, tag))
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Uniform integer in [lo, hi] inclusive.
    pub fn int_in(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..=hi)
    }

    /// Matrix of i.i.d. standard normals.
    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        Array2::from_shape_simple_fn((rows, cols), || self.normal())
    }

    /// Vector of i.i.d. standard normals.
    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}
