//! Named random substreams.
//!
//! Every random draw in the workbench comes from a ChaCha stream whose key is
//! derived from the run seed plus a stream name, so codebooks, fake facts and
//! the synthetic corpus can each be regenerated without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Stream for `name` under `seed`.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    keyed_stream(seed, &[name])
}

/// Stream keyed by several path components, e.g. `["codebook", "entity", id]`.
pub fn keyed_stream(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in parts {
        // length prefix keeps ("ab","c") distinct from ("a","bc")
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
