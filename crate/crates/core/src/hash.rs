//! Content hashing for cache keys.
//!
//! Dataset and run caches are keyed by the sha256 of the canonical JSON
//! serialization of the generating config. serde_json writes map keys in
//! struct-field order, which is stable for a fixed struct definition, so
//! hashing the compact serialization is reproducible across runs.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// sha256 hex digest of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// sha256 hex digest of a value's compact JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    sha256_hex(&json)
}

/// Short (12 hex char) prefix of a config hash, for directory names.
pub fn short_hash<T: Serialize>(value: &T) -> String {
    let mut h = config_hash(value);
    h.truncate(12);
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        // Standard test vector: sha256("abc").
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn hash_tracks_content() {
        #[derive(Serialize)]
        struct C {
            n: u32,
        }
        assert_eq!(config_hash(&C { n: 3 }), config_hash(&C { n: 3 }));
        assert_ne!(config_hash(&C { n: 3 }), config_hash(&C { n: 4 }));
    }
}
