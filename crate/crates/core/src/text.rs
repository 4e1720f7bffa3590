//! Shared lexical normalization for BM25 corpora and queries.

/// Lowercases and splits on runs of non-alphanumeric characters. No
/// stemming, no stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}
