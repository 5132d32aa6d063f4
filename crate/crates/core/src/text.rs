//! Text normalization shared by DOM extraction, grounding and scoring.

use unicode_normalization::UnicodeNormalization;

/// NFC-normalizes `s`, collapses whitespace runs to one space and trims.
pub fn normalize_ws(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for c in s.nfc() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    out
}

/// Lowercased, whitespace-collapsed form used for case-insensitive comparisons.
pub fn fold(s: &str) -> String {
    normalize_ws(s).to_lowercase()
}

/// Lowercase alphanumeric tokens.
pub fn content_tokens(s: &str) -> Vec<String> {
    s.nfc()
        .collect::<String>()
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}
