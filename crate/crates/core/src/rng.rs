//! Deterministic random streams.
//!
//! Every trial owns its streams. A stream is identified by a `(seed, stream_id)`
//! pair and is backed by ChaCha8, whose output is specified bit-for-bit, so the
//! same pair yields the same draws on every platform.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

/// Well-known stream identifiers used by the engines.
pub mod streams {
    pub const OPINIONS: u64 = 0;
    pub const DYNAMICS: u64 = 1;
    pub const CLUSTERING: u64 = 2;
    pub const CONSENSUS: u64 = 3;
    pub const CALIBRATION: u64 = 4;
}

/// A seedable random source with the handful of primitives the simulators need.
#[derive(Debug, Clone)]
pub struct SimRng {
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        SimRng { inner }
    }

    /// Uniform index in `0..n`. `n` must be positive and fit in 32 bits.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0 && n <= u32::MAX as usize);
        self.inner.random_range(0..n as u32) as usize
    }

    /// Uniform real in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Exponential variate with the given rate (mean `1 / rate`).
    #[inline]
    pub fn exponential(&mut self, rate: f64) -> f64 {
        let e: f64 = Exp1.sample(&mut self.inner);
        e / rate
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Access to the underlying generator for `rand_distr` distributions.
    pub fn inner_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

/// `seeded_rng(seed, stream_id)`: an independent deterministic stream.
pub fn seeded_rng(seed: u64, stream_id: u64) -> SimRng {
    SimRng::new(seed, stream_id)
}

/// SplitMix64 finalizer, used to expand a trial index into a seed offset.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for trial `trial` of an experiment seeded with `seed`.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    seed ^ splitmix64(trial)
}
