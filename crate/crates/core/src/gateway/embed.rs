use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::text::word_tokens;

pub const EMBED_DIM: usize = 64;

/// Deterministic compositional embedder: a text's vector is the normalized
/// sum of its token vectors. Tokens with a fixture vector use it; the rest get
/// a sparse signed hash vector.
#[derive(Debug, Clone, Default)]
pub struct HashedEmbedder {
    table: HashMap<String, Vec<f32>>,
}

impl HashedEmbedder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Vectors must have length [`EMBED_DIM`]; others are ignored.
    pub fn with_table(table: HashMap<String, Vec<f32>>) -> Self {
        HashedEmbedder { table: table.into_iter().filter(|(_, v)| v.len() == EMBED_DIM).collect() }
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f32>) {
        if vector.len() == EMBED_DIM {
            self.table.insert(token.into(), vector);
        }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f32> {
        if let Some(v) = self.table.get(token) {
            return v.clone();
        }
        let digest = Sha256::digest(token.as_bytes());
        let mut v = vec![0.0f32; EMBED_DIM];
        for pair in digest.chunks(2).take(4) {
            let idx = pair[0] as usize % EMBED_DIM;
            v[idx] += if pair[1] & 1 == 0 { 1.0 } else { -1.0 };
        }
        v
    }

    /// Unit-norm vector; the empty text (or one with no tokens) maps to the
    /// uniform vector `1/sqrt(EMBED_DIM)` in every component.
    pub fn embed(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0.0f32; EMBED_DIM];
        for tok in word_tokens(text) {
            for (a, x) in acc.iter_mut().zip(self.token_vector(&tok)) {
                *a += x;
            }
        }
        let norm = acc.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm < 1e-9 {
            return vec![1.0 / (EMBED_DIM as f32).sqrt(); EMBED_DIM];
        }
        acc.iter().map(|x| x / norm).collect()
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_norm_and_deterministic() {
        let e = HashedEmbedder::new();
        let a = e.embed("monthly income by product");
        assert_eq!(a, e.embed("monthly income by product"));
        let n: f32 = a.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-5);
    }

    #[test]
    fn empty_is_uniform() {
        let v = HashedEmbedder::new().embed("");
        assert!(v.iter().all(|x| (x - 0.125).abs() < 1e-6));
    }

    #[test]
    fn table_vectors_override_hash() {
        let mut e = HashedEmbedder::new();
        let mut base = vec![0.0; EMBED_DIM];
        base[3] = 1.0;
        e.insert("income", base.clone());
        base[4] = 0.2;
        e.insert("revenue", base);
        assert!(cosine(&e.embed("income"), &e.embed("revenue")) > cosine(&e.embed("income"), &e.embed("ftime")));
    }
}
