//! Prompt templates: rendering few-shot prompts under a token budget and
//! parsing completions back into query text.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, FewShotSet};
use crate::text::{truncate_words, whitespace_token_count};

use super::{FailureReason, PromptError};

pub const DEFAULT_TURN_DOC: &str = "0 ";
pub const DEFAULT_TURN_QUERY: &str = "1 ";
pub const DEFAULT_SEPARATOR: &str = " X";

/// The fixed instruction used when no task template is available.
pub const ZERO_SHOT_INSTRUCTION: &str = "Read the passage and generate a query.";

/// A task-specific prompt template.
///
/// `doc_pattern` must contain `{passage}` exactly once and `query_pattern`
/// must contain `{query}` exactly once, with a non-empty prefix before it:
/// the prefix is the anchor the completion parser keys on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub doc_pattern: String,
    pub query_pattern: String,
    #[serde(default = "default_turn_doc")]
    pub turn_doc: String,
    #[serde(default = "default_turn_query")]
    pub turn_query: String,
    #[serde(default = "default_separator")]
    pub separator: String,
}

fn default_turn_doc() -> String {
    DEFAULT_TURN_DOC.to_string()
}

fn default_turn_query() -> String {
    DEFAULT_TURN_QUERY.to_string()
}

fn default_separator() -> String {
    DEFAULT_SEPARATOR.to_string()
}

impl PromptTemplate {
    pub fn new(id: &str, doc_pattern: &str, query_pattern: &str) -> Result<Self, PromptError> {
        let t = Self {
            id: id.to_string(),
            doc_pattern: doc_pattern.to_string(),
            query_pattern: query_pattern.to_string(),
            turn_doc: default_turn_doc(),
            turn_query: default_turn_query(),
            separator: default_separator(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.doc_pattern.matches("{passage}").count() != 1 {
            return Err(PromptError::BadTemplate {
                id: self.id.clone(),
                reason: "doc_pattern must contain {passage} exactly once".into(),
            });
        }
        if self.query_pattern.matches("{query}").count() != 1 {
            return Err(PromptError::BadTemplate {
                id: self.id.clone(),
                reason: "query_pattern must contain {query} exactly once".into(),
            });
        }
        if self.query_anchor().is_empty() {
            return Err(PromptError::BadTemplate {
                id: self.id.clone(),
                reason: "query_pattern needs a non-empty prefix before {query}".into(),
            });
        }
        Ok(())
    }

    /// Loads a template from a TOML file with fields `id`, `doc_pattern`,
    /// `query_pattern` and optional `turn_doc` / `turn_query` / `separator`.
    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let raw = std::fs::read_to_string(path).map_err(|e| PromptError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let t: PromptTemplate = toml::from_str(&raw).map_err(|e| PromptError::BadTemplate {
            id: path.display().to_string(),
            reason: e.to_string(),
        })?;
        t.validate()?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<(), PromptError> {
        let raw = toml::to_string(self).expect("template serializes");
        std::fs::write(path, raw).map_err(|e| PromptError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    /// Text of `query_pattern` before the `{query}` placeholder.
    pub fn query_anchor(&self) -> &str {
        let idx = self.query_pattern.find("{query}").unwrap_or(self.query_pattern.len());
        &self.query_pattern[..idx]
    }

    /// How a new document turn opens: the turn marker plus the doc-pattern
    /// prefix, e.g. `"0 Argument:"`. A completion starting with this skipped
    /// the query entirely.
    pub fn doc_turn_prefix(&self) -> String {
        let idx = self.doc_pattern.find("{passage}").unwrap_or(self.doc_pattern.len());
        format!("{}{}", self.turn_doc, &self.doc_pattern[..idx])
    }

    fn render_doc(&self, text: &str) -> String {
        self.doc_pattern.replace("{passage}", text)
    }

    fn render_query(&self, text: &str) -> String {
        self.query_pattern.replace("{query}", text)
    }
}

/// Per-field truncation caps and the overall whitespace-token budget used
/// when rendering a prompt.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PromptBudget {
    pub max_tokens: usize,
    /// Cap on each exemplar document, in whitespace tokens.
    pub example_doc_cap: usize,
    /// Cap on each exemplar query, in whitespace tokens.
    pub example_query_cap: usize,
}

impl PromptBudget {
    pub fn new(max_tokens: usize) -> Self {
        Self {
            max_tokens,
            ..Self::default()
        }
    }
}

impl Default for PromptBudget {
    fn default() -> Self {
        Self {
            max_tokens: 1024,
            example_doc_cap: 128,
            example_query_cap: 64,
        }
    }
}

fn assemble(template: &PromptTemplate, examples: &[(String, String)], target_text: &str) -> String {
    let mut parts: Vec<String> = Vec::with_capacity(2 * examples.len() + 2);
    for (q, d) in examples {
        parts.push(format!(
            "{}{}{}",
            template.turn_doc,
            template.render_doc(d),
            template.separator
        ));
        parts.push(format!(
            "{}{}{}",
            template.turn_query,
            template.render_query(q),
            template.separator
        ));
    }
    parts.push(format!(
        "{}{}{}",
        template.turn_doc,
        template.render_doc(target_text),
        template.separator
    ));
    let last = format!("{}{}", template.turn_query, template.query_anchor());
    parts.push(last.trim_end().to_string());
    parts.join(" ")
}

/// Renders the few-shot prompt: interleaved exemplar document/query turns
/// followed by the target document and the bare query anchor.
///
/// Exemplar fields are first truncated to the per-field caps; if the prompt
/// still exceeds the budget, exemplars are dropped from the end of the list.
/// The target document itself is never truncated: if it alone does not fit,
/// that is an error.
pub fn build_prompt(
    template: &PromptTemplate,
    fewshot: &FewShotSet,
    target: &Document,
    budget: &PromptBudget,
) -> Result<String, PromptError> {
    let target_text = target.full_text();
    let bare = assemble(template, &[], &target_text);
    let bare_len = whitespace_token_count(&bare);
    if bare_len > budget.max_tokens {
        return Err(PromptError::BudgetTooSmall {
            budget: budget.max_tokens,
            required: bare_len,
        });
    }

    let mut examples: Vec<(String, String)> = fewshot
        .examples
        .iter()
        .map(|(q, d)| {
            (
                truncate_words(&q.text, budget.example_query_cap),
                truncate_words(&d.full_text(), budget.example_doc_cap),
            )
        })
        .collect();

    loop {
        let prompt = assemble(template, &examples, &target_text);
        if whitespace_token_count(&prompt) <= budget.max_tokens {
            return Ok(prompt);
        }
        // Drop the last exemplar first; the earliest ones are presumed the
        // most carefully chosen.
        examples.pop().expect("bare prompt already fits");
    }
}

/// The universal prompt used when no exemplars exist for the task.
pub fn zero_shot_prompt(target: &Document) -> String {
    format!("{} {}", target.full_text(), ZERO_SHOT_INSTRUCTION)
}

/// Extracts the query text from a raw completion.
///
/// The prompt already ends with the query anchor, so the completion is
/// expected to be the query body itself. A repeated anchor is stripped for
/// safety. The query runs up to the first separator token or line break.
/// A completion that instead opens a new document turn is a
/// `missing-anchor` failure; an empty remainder is `empty-after-strip`;
/// a query longer than `max_query_words` is `over-length`.
pub fn parse_completion(
    template: &PromptTemplate,
    completion: &str,
    max_query_words: Option<usize>,
) -> Result<String, FailureReason> {
    let mut rest = completion.trim_start();

    let anchor = template.query_anchor().trim_end();
    if !anchor.is_empty() && rest.starts_with(anchor) {
        rest = &rest[anchor.len()..];
    } else {
        let full_anchor = format!("{}{}", template.turn_query, anchor);
        if rest.starts_with(&full_anchor) {
            rest = &rest[full_anchor.len()..];
        } else if starts_with_token(rest, template.doc_turn_prefix().trim_end()) {
            // The model skipped straight to a new document turn.
            return Err(FailureReason::MissingAnchor);
        }
    }

    let mut cut = rest.len();
    let separator = template.separator.as_str();
    if !separator.is_empty() {
        if let Some(idx) = rest.find(separator) {
            cut = cut.min(idx);
        }
        // The leading-whitespace strip may have eaten the separator's own
        // leading space, so also match it at the very start.
        if starts_with_token(rest.trim_start(), separator.trim_start()) {
            cut = 0;
        }
    }
    if let Some(idx) = rest.find('\n') {
        cut = cut.min(idx);
    }
    let query = rest[..cut].trim();
    if query.is_empty() {
        return Err(FailureReason::EmptyAfterStrip);
    }
    if let Some(cap) = max_query_words {
        if whitespace_token_count(query) > cap {
            return Err(FailureReason::OverLength);
        }
    }
    Ok(query.to_string())
}

/// True when `haystack` starts with `token` at a word boundary: the match is
/// followed by whitespace or the end of the string.
fn starts_with_token(haystack: &str, token: &str) -> bool {
    if token.is_empty() || !haystack.starts_with(token) {
        return false;
    }
    haystack[token.len()..]
        .chars()
        .next()
        .is_none_or(char::is_whitespace)
}

/// Extracts a query from a zero-shot completion: first non-empty line,
/// trimmed, with the same length cap.
pub fn parse_zero_shot_completion(
    completion: &str,
    max_query_words: Option<usize>,
) -> Result<String, FailureReason> {
    let query = completion.trim_start().lines().next().unwrap_or("").trim();
    if query.is_empty() {
        return Err(FailureReason::EmptyAfterStrip);
    }
    if let Some(cap) = max_query_words {
        if whitespace_token_count(query) > cap {
            return Err(FailureReason::OverLength);
        }
    }
    Ok(query.to_string())
}
