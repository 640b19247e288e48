//! Deterministic random number generation.
//!
//! Every stochastic component in the crate draws from [`Rng`], a thin wrapper
//! around ChaCha8 that can snapshot and restore its exact stream position, so
//! training runs, evaluations, and checkpoints replay bit-identically.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

/// Serializable snapshot of a generator: the original seed plus the position
/// reached in the ChaCha stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
    seed: u64,
}

impl Rng {
    pub fn seed_from_u64(seed: u64) -> Self {
        Rng { inner: ChaCha8Rng::seed_from_u64(seed), seed }
    }

    pub fn state(&self) -> RngState {
        RngState { seed: self.seed, word_pos: self.inner.get_word_pos() }
    }

    pub fn restore(state: &RngState) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(state.seed);
        inner.set_word_pos(state.word_pos);
        Rng { inner, seed: state.seed }
    }

    /// Derive an independent child generator (e.g. one per episode or cell).
    pub fn split(&mut self) -> Rng {
        Rng::seed_from_u64(self.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53-bit resolution.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform index in `0..n`. Modulo bias is negligible for n << 2^64.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    pub fn flip(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    /// Standard normal draw via Box-Muller. Stateless: each call consumes two
    /// uniforms and returns one value, which keeps `RngState` a pure stream
    /// position.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.unit(); // (0, 1]: keeps the log finite
        let u2 = self.unit();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::seed_from_u64(7);
        let mut b = Rng::seed_from_u64(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn restore_resumes_stream() {
        let mut a = Rng::seed_from_u64(42);
        for _ in 0..13 {
            a.normal();
            a.unit();
        }
        let snap = a.state();
        let tail: Vec<u64> = (0..20).map(|_| a.next_u64()).collect();
        let mut b = Rng::restore(&snap);
        let tail2: Vec<u64> = (0..20).map(|_| b.next_u64()).collect();
        assert_eq!(tail, tail2);
    }

    #[test]
    fn unit_in_range() {
        let mut r = Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let x = r.unit();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn normal_moments() {
        let mut r = Rng::seed_from_u64(11);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let z = r.normal();
            sum += z;
            sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }
}
