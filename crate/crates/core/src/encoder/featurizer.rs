//! Hashed word n-gram featurizer.
//!
//! A desk-scale stand-in for a subword transformer encoder: texts become
//! sparse count vectors over hashed n-grams of lowercased word tokens,
//! normalized to unit L1 mass. Featurization is pure and deterministic.

use serde::{Deserialize, Serialize};

use crate::hash::fnv1a64;
use crate::scalar::Scalar;
use crate::text::word_tokens;

pub const DEFAULT_HASH_SPACE: u32 = 1 << 18;

/// Separator byte between tokens inside one hashed n-gram key.
const NGRAM_JOIN: u8 = 0x1f;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Featurizer {
    pub hash_space: u32,
    /// n-gram orders, e.g. [1, 2] for unigrams and bigrams.
    pub orders: Vec<u8>,
}

impl Default for Featurizer {
    fn default() -> Self {
        Self {
            hash_space: DEFAULT_HASH_SPACE,
            orders: vec![1, 2],
        }
    }
}

impl Featurizer {
    pub fn new(hash_space: u32, orders: &[u8]) -> Self {
        let mut orders = orders.to_vec();
        orders.sort_unstable();
        orders.dedup();
        assert!(!orders.is_empty(), "at least one n-gram order required");
        assert!(hash_space > 0, "hash space must be non-empty");
        Self { hash_space, orders }
    }

    fn bucket(&self, order: u8, tokens: &[String]) -> u32 {
        let mut key = Vec::with_capacity(1 + tokens.iter().map(|t| t.len() + 1).sum::<usize>());
        key.push(order);
        for (i, tok) in tokens.iter().enumerate() {
            if i > 0 {
                key.push(NGRAM_JOIN);
            }
            key.extend_from_slice(tok.as_bytes());
        }
        (fnv1a64(&key) % u64::from(self.hash_space)) as u32
    }

    /// Raw n-gram counts as (bucket, count), sorted by bucket.
    pub fn counts(&self, text: &str) -> Vec<(u32, u32)> {
        let tokens = word_tokens(text);
        let mut counts = std::collections::HashMap::new();
        for &order in &self.orders {
            let n = order as usize;
            if n == 0 || tokens.len() < n {
                continue;
            }
            for window in tokens.windows(n) {
                *counts.entry(self.bucket(order, window)).or_insert(0u32) += 1;
            }
        }
        let mut out: Vec<(u32, u32)> = counts.into_iter().collect();
        out.sort_unstable_by_key(|(bucket, _)| *bucket);
        out
    }

    /// Sparse feature vector with unit L1 norm; empty text maps to the zero
    /// vector (an empty list).
    pub fn features<S: Scalar>(&self, text: &str) -> Vec<(u32, S)> {
        let counts = self.counts(text);
        let total: u32 = counts.iter().map(|(_, c)| c).sum();
        if total == 0 {
            return Vec::new();
        }
        let total = S::from_u32(total).expect("count fits scalar");
        counts
            .into_iter()
            .map(|(bucket, c)| (bucket, S::from_u32(c).expect("count fits scalar") / total))
            .collect()
    }
}
