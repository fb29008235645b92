//! Tokenization helpers shared by the placeholder annotator and the stub
//! client's fallback replies.

use std::collections::{BTreeMap, BTreeSet};

const STOPWORDS: &[&str] = &[
    "and", "are", "for", "from", "in", "nos", "not", "of", "on", "or", "other", "the", "to", "unspecified", "with",
    "without",
];

/// Lowercased alphanumeric tokens containing a letter, minus stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().any(char::is_alphabetic))
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// The `n` most frequent tokens across `texts`, ties broken alphabetically.
pub fn top_tokens<'a>(texts: impl IntoIterator<Item = &'a str>, n: usize) -> Vec<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in texts {
        for tok in tokenize(t) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(n).map(|(t, _)| t).collect()
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

/// |A ∩ B| / |A ∪ B| over token sets; 0 when both are empty.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let (a, b) = (token_set(a), token_set(b));
    let union = a.union(&b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(&b).count() as f64 / union as f64
    }
}
