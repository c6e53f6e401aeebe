//! Splittable deterministic randomness.
//!
//! Every stage and every per-item stream is derived from
//! `(master seed, stage tag, index)` by hashing into a ChaCha8 key, so
//! parallel execution order can never change outputs and pools built with
//! different sizes share prefixes.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives the independent stream for `(seed, tag, index)`.
pub fn substream(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(tag.as_bytes());
    hasher.update([0u8]);
    hasher.update(index.to_le_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(key)
}
