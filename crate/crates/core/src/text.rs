//! Shared text utilities: word tokenization for featurizers and whitespace
//! token accounting for prompt budgets.

/// Lowercased alphanumeric word tokens. Punctuation splits tokens;
/// `"Re-rank IT!"` becomes `["re", "rank", "it"]`.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lower in ch.to_lowercase() {
                current.push(lower);
            }
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Number of whitespace-separated tokens. This is the unit for prompt
/// budgets and truncation caps.
pub fn whitespace_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// First `cap` whitespace tokens of `text`, joined by single spaces.
/// Returns the trimmed text unchanged (modulo whitespace normalization)
/// when it already fits.
pub fn truncate_words(text: &str, cap: usize) -> String {
    let mut out = String::new();
    for (i, tok) in text.split_whitespace().enumerate() {
        if i >= cap {
            break;
        }
        if i > 0 {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

/// First sentence of `text`: everything up to and excluding the first '.',
/// '?' or '!', falling back to the whole text. Used by the stub generator.
pub fn first_sentence(text: &str) -> &str {
    match text.find(['.', '?', '!']) {
        Some(idx) => text[..idx].trim(),
        None => text.trim(),
    }
}
