//! Deterministic, platform-independent seed derivation. All randomness in
//! the pipeline flows from a master seed through SHA-256 of
//! (seed, domain, key), so results never depend on iteration or arrival
//! order.

use sha2::{Digest, Sha256};

pub fn hash_u64(seed: u64, domain: &str, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update([0u8]);
    h.update(domain.as_bytes());
    h.update([0u8]);
    h.update(key.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Maps (seed, domain, key) to [0, 1).
pub fn hash01(seed: u64, domain: &str, key: &str) -> f64 {
    hash_u64(seed, domain, key) as f64 / (u64::MAX as f64 + 1.0)
}
