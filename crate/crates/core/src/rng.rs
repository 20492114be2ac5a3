//! Seeded sample stream used by every synthetic generator.
//!
//! The stream is ChaCha20 keyed by the 64-bit seed (little-endian in the
//! first eight key bytes, remaining key bytes zero), nonce/stream id chosen by
//! the caller, block counter starting at zero. Uniforms take the top 53 bits
//! of each 64-bit output; normals use the cosine branch of Box–Muller on two
//! consecutive uniforms. Any implementation following those three rules
//! reproduces the same values.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

const TWO_POW_53: f64 = (1u64 << 53) as f64;

pub struct SampleStream {
    inner: ChaCha20Rng,
}

impl SampleStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut inner = ChaCha20Rng::from_seed(key);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 / TWO_POW_53
    }

    /// Standard normal sample.
    pub fn normal(&mut self) -> f64 {
        // 1 - u lies in (0, 1], so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normals(&mut self, count: usize) -> Vec<f64> {
        (0..count).map(|_| self.normal()).collect()
    }

    /// Unit vector drawn uniformly from the sphere in `dim` dimensions.
    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v = self.normals(dim);
            let n = crate::tensor::norm(&v);
            if n > 1e-12 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }
}
