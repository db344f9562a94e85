//! Stable hashing helpers.
//!
//! Everything that feeds determinism contracts (feature hashing, stage seed
//! derivation, cache keys, checkpoint fingerprints) goes through fixed,
//! platform-independent algorithms rather than `std::hash`.

use sha2::{Digest, Sha256};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over raw bytes. Used for feature hashing where throughput matters.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// SHA-256 digest as a lowercase hex string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Incremental SHA-256 hasher for cache keys built from several parts.
#[derive(Default)]
pub struct KeyHasher {
    inner: Sha256,
}

impl KeyHasher {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds one length-delimited part, so ("ab","c") and ("a","bc") differ.
    pub fn part(&mut self, bytes: &[u8]) -> &mut Self {
        self.inner.update((bytes.len() as u64).to_le_bytes());
        self.inner.update(bytes);
        self
    }

    pub fn text(&mut self, s: &str) -> &mut Self {
        self.part(s.as_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.part(&v.to_le_bytes())
    }

    pub fn finish_hex(self) -> String {
        let digest = self.inner.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }

    pub fn finish_u64(self) -> u64 {
        let digest = self.inner.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

/// Derives a child seed from a parent seed and a label, e.g. a stage name.
/// Stable across platforms and releases.
pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let mut h = KeyHasher::new();
    h.u64(parent).text(label);
    h.finish_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_known_vectors() {
        // Reference values for the 64-bit FNV-1a test suite.
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn derive_seed_is_stable_and_label_sensitive() {
        let a = derive_seed(7, "generate");
        let b = derive_seed(7, "generate");
        let c = derive_seed(7, "pretrain");
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn key_hasher_is_length_delimited() {
        let mut h1 = KeyHasher::new();
        h1.text("ab").text("c");
        let mut h2 = KeyHasher::new();
        h2.text("a").text("bc");
        assert_ne!(h1.finish_hex(), h2.finish_hex());
    }
}
