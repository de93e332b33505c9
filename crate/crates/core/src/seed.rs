//! Stable seed derivation.
//!
//! Per-item seeds are hashed from a global seed and the item's identity
//! (never its position), so results do not depend on scheduling, input
//! order or platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(global: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_for(global: u64, parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(global, parts))
}
