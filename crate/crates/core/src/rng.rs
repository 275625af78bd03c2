//! Seeded random source used for initialization and oracle trials.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::matrix::DenseMatrix;

/// Name recorded in run manifests.
pub const PRNG_NAME: &str = "ChaCha8 (rand_chacha 0.3) + ziggurat StandardNormal (rand_distr 0.4)";

/// Deterministic, platform-independent random stream.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.gen::<f64>()
    }

    /// Log-uniform in `[lo, hi)`, both positive.
    pub fn log_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.uniform(lo.ln(), hi.ln()).exp()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.gen_range(lo..=hi)
    }

    pub fn bool(&mut self, p: f64) -> bool {
        self.inner.gen::<f64>() < p
    }
}

/// Matrix of i.i.d. `N(0, std²)` entries, filled row by row.
pub fn gaussian(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> DenseMatrix {
    assert!(std >= 0.0, "std must be non-negative");
    DenseMatrix::from_fn(rows, cols, |_, _| std * rng.normal())
}

/// Matrix of i.i.d. uniform entries in `[lo, hi)`.
pub fn uniform(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.uniform(lo, hi))
}

/// Bijective 64-bit mix (the SplitMix64 finalizer); maps 0 to 0.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_std_gives_zero_matrix() {
        let mut rng = Rng::new(3);
        assert_eq!(gaussian(&mut rng, 3, 4, 0.0).max_abs(), 0.0);
    }

    #[test]
    fn same_seed_same_stream() {
        let a = gaussian(&mut Rng::new(42), 5, 7, 1.0);
        let b = gaussian(&mut Rng::new(42), 5, 7, 1.0);
        assert_eq!(a, b);
        assert_ne!(a, gaussian(&mut Rng::new(43), 5, 7, 1.0));
    }

    #[test]
    fn unit_variance() {
        let m = gaussian(&mut Rng::new(7), 100, 1000, 1.0);
        let n = m.data().len() as f64;
        let mean = m.data().iter().sum::<f64>() / n;
        let var = m.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn mix_fixes_zero() {
        assert_eq!(mix64(0), 0);
        assert_ne!(mix64(1), 1);
    }
}
