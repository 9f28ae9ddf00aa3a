//! Per-purpose random streams derived from one base seed.
//!
//! `derive_seed(seed, "init/hetl")` hashes the base seed together with a
//! purpose label, so every consumer (shuffles, init, dropout, augmentation,
//! splits, generator) gets an independent stream that does not shift when
//! another consumer draws more or fewer numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub fn stream(seed: u64, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose))
}
