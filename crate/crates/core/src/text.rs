//! Small text utilities shared by similarity, dedup and lexical scoring.

use std::collections::BTreeSet;

/// Lowercased alphanumeric words. Underscores split words, and the joined
/// form of an underscore identifier is kept as well so `shouldincome_after`
/// matches both `shouldincome_after` and `shouldincome`.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split(|c: char| !(c.is_alphanumeric() || c == '_')) {
        if raw.is_empty() {
            continue;
        }
        let lower = raw.to_lowercase();
        if lower.contains('_') {
            for part in lower.split('_').filter(|p| !p.is_empty()) {
                out.push(part.to_string());
            }
            let trimmed = lower.trim_matches('_');
            if !trimmed.is_empty() {
                out.push(trimmed.to_string());
            }
        } else {
            out.push(lower);
        }
    }
    out
}

pub fn word_set(text: &str) -> BTreeSet<String> {
    word_tokens(text).into_iter().collect()
}

const STOPWORDS: &[&str] = &[
    "a", "about", "all", "an", "and", "are", "as", "at", "be", "by", "can", "do", "for", "from", "get", "give", "how",
    "i", "in", "is", "it", "me", "my", "of", "on", "or", "please", "show", "tell", "that", "the", "this", "to", "us",
    "was", "we", "what", "which", "with", "you",
];

/// Word set without common function words; used for lexical matching.
pub fn content_words(text: &str) -> BTreeSet<String> {
    word_tokens(text).into_iter().filter(|w| !STOPWORDS.contains(&w.as_str())).collect()
}

/// Jaccard index of two sets; two empty sets are identical (1.0).
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count() as f64;
    let union = a.union(b).count() as f64;
    inter / union
}

/// Cosine similarity of two sets viewed as binary vectors.
pub fn set_cosine(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count() as f64;
    inter / ((a.len() as f64) * (b.len() as f64)).sqrt()
}

/// Token-overlap F1 where `query` plays the role of the reference.
pub fn overlap_f1(query: &BTreeSet<String>, candidate: &BTreeSet<String>) -> f64 {
    if query.is_empty() || candidate.is_empty() {
        return 0.0;
    }
    let inter = query.intersection(candidate).count() as f64;
    if inter == 0.0 {
        return 0.0;
    }
    let precision = inter / candidate.len() as f64;
    let recall = inter / query.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Finds the JSON object in a model reply: the whole reply, a fenced block,
/// or the span from the first `{` to the last `}`.
pub fn extract_json(text: &str) -> Option<serde_json::Value> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str::<serde_json::Value>(trimmed) {
        return Some(v);
    }
    let start = trimmed.find(['{', '['])?;
    let end = trimmed.rfind(['}', ']'])?;
    (start < end).then(|| serde_json::from_str(&trimmed[start..=end]).ok()).flatten()
}

/// Character-count heuristic: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}
