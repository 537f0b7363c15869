//! Character and word n-gram enumeration.

use std::collections::BTreeMap;

/// Sliding-window character n-grams over the lowercased text, spaces included.
pub fn char_ngrams(text: &str, sizes: &[usize]) -> BTreeMap<String, u32> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut out = BTreeMap::new();
    for &n in sizes {
        if n == 0 || chars.len() < n {
            continue;
        }
        for w in chars.windows(n) {
            *out.entry(w.iter().collect::<String>()).or_insert(0) += 1;
        }
    }
    out
}

/// Word n-grams over a token sequence, joined by single spaces.
pub fn word_ngrams(tokens: &[String], sizes: &[usize]) -> BTreeMap<String, u32> {
    let mut out = BTreeMap::new();
    for &n in sizes {
        if n == 0 || tokens.len() < n {
            continue;
        }
        for w in tokens.windows(n) {
            *out.entry(w.join(" ")).or_insert(0) += 1;
        }
    }
    out
}
