//! Stage-labeled seed expansion.

use sha2::{Digest, Sha256};

/// Derives an independent 64-bit seed for a named stage from a master seed.
/// Stable across platforms and releases.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
}
