//! Deterministic pseudo-random tensors for tests and oracles. Kept in the
//! library (not cfg(test)) so integration tests and the acceptance suite can
//! share one generator.

use crate::tensor::{Scalar, Tensor};

/// splitmix64 stream; stable across platforms and runs.
pub struct DetRng(u64);

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0xabcd))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + u * (hi - lo)
    }

    pub fn usize_below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

/// Tensor with entries uniform in [lo, hi).
pub fn uniform_tensor<T: Scalar>(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<T> {
    let mut rng = DetRng::new(seed);
    Tensor::from_fn(shape, |_| T::from_f64(rng.uniform(lo, hi)))
}
