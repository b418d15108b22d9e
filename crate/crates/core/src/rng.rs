//! Seedable random streams.
//!
//! Every random draw in the crate goes through [`RngStream`], which wraps
//! ChaCha8 seeded with `seed_from_u64`. Normal variates come from
//! `rand_distr::StandardNormal` (ziggurat). Independent sub-streams for
//! dataset generation, initialization, shuffling and mirror noise are
//! derived with [`RngStream::substream`], which selects a ChaCha stream id
//! and leaves the key untouched.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// A fresh stream with the same key but a different ChaCha stream id.
    /// Streams with distinct ids never overlap.
    pub fn substream(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub(crate) fn inner_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}
