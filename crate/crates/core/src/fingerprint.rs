//! Stable content hashes used to tie artifacts to the config that produced them.

use sha2::{Digest, Sha256};

/// Hex SHA-256 of `bytes`, truncated to 16 hex characters.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}

/// Full hex SHA-256 of `bytes`.
pub fn full_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of several labelled parts; the separator keeps ("ab","c") and ("a","bc") apart.
pub fn hash_parts(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hex::encode(&hasher.finalize()[..8])
}
