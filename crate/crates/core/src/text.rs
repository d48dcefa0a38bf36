//! Shared text helpers.

/// Lowercased whitespace tokens of `s`, in order (duplicates kept).
pub fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(|t| t.to_lowercase()).collect()
}
