//! Keyed deterministic random streams.
//!
//! Every random quantity in the corpus generator and the synthetic providers
//! comes from a ChaCha8 stream whose 256-bit seed is the SHA-256 of
//! `(global seed, domain, key)`. Streams for different keys are independent,
//! so a value can be recomputed from its key alone without replaying the
//! generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn keyed_rng(seed: u64, domain: &str, key: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((domain.len() as u64).to_le_bytes());
    hasher.update(domain.as_bytes());
    hasher.update(key.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}
