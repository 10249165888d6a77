//! Named seed derivation. Every random stream is a pure function of the run
//! seed, a stream name and an index.

use sha2::{Digest, Sha256};

pub fn derive_seed(base: u64, stream: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update((stream.len() as u64).to_le_bytes());
    h.update(stream.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Hex SHA-256 of `bytes`, truncated to 16 characters.
pub fn short_hash(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d[..8].iter().map(|b| format!("{b:02x}")).collect()
}
