//! Caption tokenization shared by target alignment and the metrics.

/// Lowercases and trims punctuation from both ends; interior characters stay.
pub fn normalize_token(token: &str) -> String {
    token.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Whitespace split, then [`normalize_token`]; empty pieces are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(normalize_token)
        .filter(|t| !t.is_empty())
        .collect()
}
