//! Seeded randomness.
//!
//! All draws come from xoshiro256** seeded through splitmix64. Named
//! substreams derive their seed from `(seed, name)` so that adding draws to one
//! stream never shifts another.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256StarStar;

/// Deterministic random source.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: Xoshiro256StarStar,
}

impl Rng {
    pub fn seed_from_u64(seed: u64) -> Self {
        Rng {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    /// Substream for `name` derived from `seed`.
    pub fn stream(seed: u64, name: &str) -> Self {
        Rng::seed_from_u64(derive_seed(seed, name))
    }

    /// Child stream keyed by additional integers (epoch, bag id, ...).
    pub fn substream(seed: u64, name: &str, keys: &[u64]) -> Self {
        let mut s = derive_seed(seed, name);
        for &k in keys {
            s = splitmix64(s ^ splitmix64(k));
        }
        Rng::seed_from_u64(s)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n)
    }

    /// Uniform integer in the inclusive range `[lo, hi]`.
    pub fn between(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.below(hi - lo + 1)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Fisher-Yates shuffle drawing 64-bit indices, so the permutation does
    /// not depend on the platform's pointer width.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

/// The independent streams a run draws from.
#[derive(Debug, Clone)]
pub struct RngStreams {
    pub data: Rng,
    pub augmentation: Rng,
    pub init: Rng,
    pub shuffle: Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams {
            data: Rng::stream(seed, "data"),
            augmentation: Rng::stream(seed, "augmentation"),
            init: Rng::stream(seed, "init"),
            shuffle: Rng::stream(seed, "shuffle"),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// FNV-1a over the name, then mixed with the seed.
fn derive_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h))
}
