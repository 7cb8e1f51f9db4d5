//! Seed derivation. Every stage draws from its own generator, seeded by
//! hashing the root seed together with a stage label, so stages can be
//! re-run independently and parallel work stays order-independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StageRng = ChaCha8Rng;

/// `sha256(root_le || label)`, first eight bytes little-endian.
pub fn derive(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn derive_indexed(root: u64, label: &str, index: u64) -> u64 {
    derive(root, &format!("{label}/{index}"))
}

pub fn rng(root: u64, label: &str) -> StageRng {
    ChaCha8Rng::seed_from_u64(derive(root, label))
}

pub fn rng_indexed(root: u64, label: &str, index: u64) -> StageRng {
    ChaCha8Rng::seed_from_u64(derive_indexed(root, label, index))
}
