//! Seed derivation and generator construction.
//!
//! Every random stream in the toolkit is a ChaCha8 generator whose 64-bit
//! seed is derived from a master seed, a textual label and a list of integer
//! coordinates. The derivation hashes
//!
//! ```text
//! master (u64 LE) || label bytes || 0x00 || coord_0 (i64 LE) || coord_1 ...
//! ```
//!
//! with SHA-256 and keeps the first eight bytes (little-endian). The result
//! depends only on its inputs, so streams can be created in any order and on
//! any platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn derive_seed(master: u64, label: &str, coords: &[i64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update([0u8]);
    for c in coords {
        hasher.update(c.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derive_rng(master: u64, label: &str, coords: &[i64]) -> Rng {
    rng_from_seed(derive_seed(master, label, coords))
}
