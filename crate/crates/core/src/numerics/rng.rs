use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Element, Tensor};
use crate::error::{ensure, Result};

/// Seeded random stream.
///
/// A stream is identified by `(seed, stream name)`. Two streams with the same
/// identity produce the same sequence; different names give independent
/// sequences for the same seed.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: String,
    inner: ChaCha8Rng,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl Rng {
    pub fn new(seed: u64, stream: &str) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(fnv1a(stream.as_bytes()));
        Rng {
            seed,
            stream: stream.to_string(),
            inner,
        }
    }

    /// Derives an independent child stream. The child does not depend on how
    /// many values were already drawn from `self`.
    pub fn fork(&self, name: &str) -> Rng {
        Rng::new(self.seed, &format!("{}/{}", self.stream, name))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> &str {
        &self.stream
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..=hi)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }

    /// I.i.d. standard normal tensor. Samples are drawn in 64-bit and rounded,
    /// so 32- and 64-bit runs see the same underlying draws.
    pub fn randn<F: Element>(&mut self, shape: &[usize]) -> Result<Tensor<F>> {
        ensure!(!shape.is_empty(), "randn needs a nonempty shape");
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| F::lit(self.normal())).collect();
        Tensor::new(shape.to_vec(), data)
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
