//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator keyed by a 64-bit seed. ChaCha output is
//! specified bit-for-bit independent of platform, so a seed pins the stream
//! everywhere. Named sub-streams are derived from `(seed, label)` through
//! SHA-256, which keeps stages independent of each other's draw counts.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::matrix::Matrix;

/// Derive a child seed from a parent seed and a stage label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn derived(seed: u64, label: &str) -> Self {
        RngState::new(derive_seed(seed, label))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize, std: f64) -> Matrix {
        let data = (0..rows * cols).map(|_| self.normal() * std).collect();
        Matrix::new(rows, cols, data).expect("shape matches by construction")
    }

    pub fn uniform_matrix(&mut self, rows: usize, cols: usize, bound: f64) -> Matrix {
        let data = (0..rows * cols)
            .map(|_| self.uniform_range(-bound, bound))
            .collect();
        Matrix::new(rows, cols, data).expect("shape matches by construction")
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_equal_streams() {
        let mut a = RngState::new(42);
        let mut b = RngState::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn unequal_seeds_diverge_quickly() {
        for s in 0..100u64 {
            let mut a = RngState::new(s);
            let mut b = RngState::new(s + 1000);
            let da: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
            let db: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
            assert_ne!(da, db);
        }
    }

    #[test]
    fn stream_is_pinned() {
        // Frozen first draws: any change in generator or seeding breaks reproducibility.
        let mut r = RngState::new(0);
        let first = r.next_u64();
        assert_eq!(first, 13080132717333068652);
        let mut again = RngState::new(0);
        assert_eq!(first, again.next_u64());
        assert_eq!(derive_seed(1, "gen"), 5997953833999098324);
        assert_ne!(derive_seed(1, "gen"), derive_seed(1, "kdes"));
        assert_ne!(derive_seed(1, "gen"), derive_seed(2, "gen"));
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = RngState::new(3);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
