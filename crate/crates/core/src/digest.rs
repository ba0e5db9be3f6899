//! Stable content hashes.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Hash of the canonical JSON form of `value`: object keys sorted,
/// compact separators. Insensitive to field order in the source document.
pub fn canonical_hash<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let text = serde_json::to_string(&v)?;
    Ok(hex::encode(&Sha256::digest(text.as_bytes())[..16]))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
