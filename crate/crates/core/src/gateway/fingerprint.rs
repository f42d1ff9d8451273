use std::sync::OnceLock;

use regex::Regex;
use sha2::{Digest, Sha256};

fn timestamp_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}(:\d{2}(\.\d+)?)?(Z|[+-]\d{2}:?\d{2})?").expect("static regex")
    })
}

/// Collapses whitespace runs and replaces date-time stamps with `<ts>`.
/// Bare dates are kept: they carry resolved query semantics.
pub fn normalize_prompt(prompt: &str) -> String {
    let stripped = timestamp_re().replace_all(prompt, "<ts>");
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn fingerprint(prompt: &str, schema: Option<&str>) -> String {
    let mut h = Sha256::new();
    h.update(schema.unwrap_or("").as_bytes());
    h.update([0u8]);
    h.update(normalize_prompt(prompt).as_bytes());
    hex::encode(h.finalize())
}
