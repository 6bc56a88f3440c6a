//! Seeded, portable random stream.
//!
//! The generator is ChaCha8 (`rand_chacha`), seeded from a 64-bit seed via
//! `SeedableRng::seed_from_u64`. Child streams are derived with [`Rng::fork`]:
//!
//! ```text
//! child_seed = splitmix64(seed ^ splitmix64(tag + 0x9E3779B97F4A7C15))
//! ```
//!
//! so that the same `(seed, tag)` always yields the same child regardless of
//! how much of the parent stream was consumed.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// Serializable position of an [`Rng`] stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Word position inside the ChaCha stream, as a decimal string (u128 does not fit JSON numbers).
    pub word_pos: String,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream identified by `tag`.
    pub fn fork(&self, tag: u64) -> Rng {
        Rng::new(splitmix64(
            self.seed ^ splitmix64(tag.wrapping_add(0x9E37_79B9_7F4A_7C15)),
        ))
    }

    /// Nested fork: `fork_path(&[a, b])` == `fork(a).fork(b)`.
    pub fn fork_path(&self, tags: &[u64]) -> Rng {
        tags.iter().fold(self.clone(), |r, &t| r.fork(t))
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            word_pos: self.inner.get_word_pos().to_string(),
        }
    }

    pub fn from_state(state: &RngState) -> Option<Self> {
        let pos: u128 = state.word_pos.parse().ok()?;
        let mut rng = Rng::new(state.seed);
        rng.inner.set_word_pos(pos);
        Some(rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        // p = 0 never fires, p = 1 always fires.
        self.uniform() < p
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn fork_ignores_parent_position() {
        let a = Rng::new(7);
        let mut b = Rng::new(7);
        b.next_u64();
        assert_eq!(a.fork(3).next_u64(), b.fork(3).next_u64());
        assert_ne!(a.fork(3).next_u64(), a.fork(4).next_u64());
    }

    #[test]
    fn state_round_trip() {
        let mut a = Rng::new(9);
        for _ in 0..17 {
            a.next_u64();
        }
        let mut b = Rng::from_state(&a.state()).unwrap();
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn frozen_first_draws() {
        // Guards against silent generator changes across dependency upgrades.
        let mut r = Rng::new(0);
        let first = r.next_u64();
        let mut again = Rng::new(0);
        assert_eq!(first, again.next_u64());
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
    }
}
