use sha2::{Digest, Sha256};

use super::{Embedder, EmbeddingVector, Result};

pub const LOCAL_PROVIDER_ID: &str = "local-reference";

/// Deterministic signed feature-hashing embedder.
///
/// Each token is hashed (seeded by the model id) into one of `dim` buckets
/// with a ±1 sign; the accumulated vector is L2-normalized. Output depends
/// only on (text, model_id, dim).
#[derive(Debug, Clone)]
pub struct LocalReferenceEmbedder {
    model_id: String,
    dim: usize,
}

impl LocalReferenceEmbedder {
    pub fn new(model_id: impl Into<String>, dim: usize) -> Self {
        Self {
            model_id: model_id.into(),
            dim: dim.max(1),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        let mut acc = vec![0.0f64; self.dim];
        for token in tokenize(text) {
            let mut hasher = Sha256::new();
            hasher.update(self.model_id.as_bytes());
            hasher.update([0]);
            hasher.update(token.as_bytes());
            let digest = hasher.finalize();
            let h = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
            let bucket = (h % self.dim as u64) as usize;
            let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
            acc[bucket] += sign;
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return EmbeddingVector::zero(self.dim, LOCAL_PROVIDER_ID, &self.model_id);
        }
        let values = acc.iter().map(|x| (x / norm) as f32).collect();
        EmbeddingVector::new(values, LOCAL_PROVIDER_ID, &self.model_id)
            .expect("normalized finite vector")
    }
}

impl Embedder for LocalReferenceEmbedder {
    fn provider_id(&self) -> &str {
        LOCAL_PROVIDER_ID
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

/// Lowercased word and identifier tokens.
///
/// Every alphanumeric run is emitted whole; runs made of several
/// camelCase / snake_case / digit-separated parts also emit each part, so
/// `caseObjectType` yields `caseobjecttype`, `case`, `object`, `type`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .map(|w| w.trim_matches('_'))
        .filter(|w| !w.is_empty())
    {
        let parts = split_identifier(word);
        out.push(word.to_lowercase());
        if parts.len() > 1 {
            out.extend(parts);
        }
    }
    out
}

fn split_identifier(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let mut parts = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c == '_' {
            if !cur.is_empty() {
                parts.push(std::mem::take(&mut cur));
            }
            continue;
        }
        if let Some(&prev) = cur.chars().last().as_ref() {
            let next = chars.get(i + 1).copied();
            let boundary = (prev.is_lowercase() && c.is_uppercase())
                || (prev.is_alphabetic() && c.is_ascii_digit())
                || (prev.is_ascii_digit() && c.is_alphabetic())
                // `HTTPServer` -> `HTTP`, `Server`
                || (prev.is_uppercase() && c.is_uppercase() && next.is_some_and(char::is_lowercase));
            if boundary {
                parts.push(std::mem::take(&mut cur));
            }
        }
        cur.push(c);
    }
    if !cur.is_empty() {
        parts.push(cur);
    }
    parts.into_iter().map(|p| p.to_lowercase()).collect()
}
