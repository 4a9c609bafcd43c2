//! Seed handling shared by every stochastic component.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Named sub-seed: bytes 0..8 of `sha256(seed_le || name)`.
///
/// Each component draws from its own stream, so adding a component never
/// shifts the draws of another.
pub fn derive(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn derived_rng(seed: u64, name: &str) -> Rng {
    rng(derive(seed, name))
}
