//! Counter-based seeded randomness.
//!
//! Every random draw in the harness comes from a ChaCha8 stream whose seed is
//! the SHA-256 of a structured key: a fixed prefix followed by typed,
//! length-delimited parts. There is no shared RNG state, so any draw can be
//! recomputed from its key alone, in any order and on any thread.
//!
//! Key encoding: `"cyclecap-stream-v1"`, then per part either
//! `0x00 ‖ len:u64le ‖ bytes` or `0x01 ‖ value:u64le`. The first two parts
//! are always the domain tag (bytes) and the seed (u64).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

const PREFIX: &[u8] = b"cyclecap-stream-v1";

#[derive(Clone)]
pub struct StreamKey {
    hasher: Sha256,
}

impl StreamKey {
    pub fn new(domain: &str, seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(PREFIX);
        StreamKey { hasher }.bytes(domain.as_bytes()).u64(seed)
    }

    pub fn u64(mut self, value: u64) -> Self {
        self.hasher.update([1u8]);
        self.hasher.update(value.to_le_bytes());
        self
    }

    pub fn bytes(mut self, value: &[u8]) -> Self {
        self.hasher.update([0u8]);
        self.hasher.update((value.len() as u64).to_le_bytes());
        self.hasher.update(value);
        self
    }

    pub fn seed_bytes(self) -> [u8; 32] {
        self.hasher.finalize().into()
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.seed_bytes())
    }

    /// `len` independent standard normal draws.
    pub fn gaussian(self, len: usize) -> Vec<f64> {
        let mut rng = self.rng();
        (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}
