//! The single tokenization rule applied once at corpus ingestion.
//!
//! Every module scores and encodes the same token streams, so the rule lives
//! here and nowhere else: lowercase, strip punctuation, split on whitespace.

/// Identifier recorded in checkpoint manifests so artifacts from a different
/// rule are detectable.
pub const TOKENIZER_RULE_ID: &str = "ws_lower_nopunct_v1";

pub fn tokenize(raw: &str) -> Vec<String> {
    raw.split_whitespace()
        .filter_map(|w| {
            let t: String = w
                .chars()
                .filter(|c| !c.is_ascii_punctuation())
                .flat_map(|c| c.to_lowercase())
                .collect();
            if t.is_empty() {
                None
            } else {
                Some(t)
            }
        })
        .collect()
}

/// Tokenizes each line of a multi-sentence text block.
pub fn tokenize_sentences<S: AsRef<str>>(raw: &[S]) -> Vec<Vec<String>> {
    raw.iter().map(|s| tokenize(s.as_ref())).collect()
}
