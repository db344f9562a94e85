//! Deterministic offline completion backend.
//!
//! Emits pseudo-queries derived from the source document: content-word
//! n-grams and the first sentence, shaped so the completion parser accepts
//! them. Output depends only on (doc id, seed, sample index), so generation
//! runs reproduce byte-identically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::corpus::Document;
use crate::hash::KeyHasher;
use crate::text::{first_sentence, word_tokens};

use super::backend::{BackendError, CompletionBackend, CompletionRequest};
use super::template::ZERO_SHOT_INSTRUCTION;
use super::GenerationConfig;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "in", "is", "it", "of", "on", "or",
    "that", "the", "this", "to", "was", "were", "with",
];

fn sample_rng(doc_id: &str, seed: u64, sample_index: usize) -> ChaCha20Rng {
    let mut hasher = KeyHasher::new();
    hasher.u64(seed).text(doc_id).u64(sample_index as u64);
    ChaCha20Rng::seed_from_u64(hasher.finish_u64())
}

fn content_words(doc: &Document) -> Vec<String> {
    let all = word_tokens(&doc.full_text());
    let content: Vec<String> = all
        .iter()
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .cloned()
        .collect();
    if content.is_empty() {
        all
    } else {
        content
    }
}

fn keyword_query(doc: &Document, seed: u64, sample_index: usize) -> String {
    if sample_index == 0 {
        let sentence = word_tokens(first_sentence(&doc.full_text()));
        if !sentence.is_empty() {
            return sentence[..sentence.len().min(8)].join(" ");
        }
    }
    let words = content_words(doc);
    if words.is_empty() {
        return String::new();
    }
    let mut rng = sample_rng(doc.id.as_str(), seed, sample_index);
    let len = rng.gen_range(1..=3usize).min(words.len());
    let start = rng.gen_range(0..=words.len() - len);
    words[start..start + len].join(" ")
}

fn question_query(doc: &Document, seed: u64, sample_index: usize) -> String {
    let words = word_tokens(first_sentence(&doc.full_text()));
    if words.is_empty() {
        return String::new();
    }
    let mut rng = sample_rng(doc.id.as_str(), seed, sample_index.wrapping_add(1 << 32));
    let len = rng.gen_range(1..=2usize).min(words.len());
    let start = rng.gen_range(0..=words.len() - len);
    format!("what is {}", words[start..start + len].join(" "))
}

/// Deterministic pseudo-completions for one document: the first sentence for
/// sample 0, then short content-word n-grams. Each completion is a single
/// line, so the completion parser accepts it verbatim.
pub fn stub_generate(doc: &Document, config: &GenerationConfig) -> Vec<String> {
    (0..config.samples_per_doc)
        .map(|idx| {
            let query = keyword_query(doc, config.seed, idx);
            format!(" {query}\n")
        })
        .collect()
}

/// Offline backend for tests and dry runs.
///
/// Imitates an instruction-following generator: prompts that end with the
/// universal zero-shot instruction get question-style completions, anchored
/// few-shot prompts get keyword-style completions mirroring the document.
pub struct StubBackend {
    seed: u64,
}

impl StubBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl CompletionBackend for StubBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, BackendError> {
        let zero_shot = request.prompt.ends_with(ZERO_SHOT_INSTRUCTION);
        let completions = (0..request.n)
            .map(|idx| {
                let query = if zero_shot {
                    question_query(request.doc, self.seed, idx)
                } else {
                    keyword_query(request.doc, self.seed, idx)
                };
                format!(" {query}\n")
            })
            .collect();
        Ok(completions)
    }

    fn name(&self) -> &str {
        "stub"
    }
}
