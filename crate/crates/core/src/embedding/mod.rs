//! Dense text embeddings behind a provider abstraction, plus similarity math.
//!
//! Two providers exist: [`RemoteEmbedder`] talks to an HTTP embedding service,
//! [`LocalReferenceEmbedder`] is a deterministic signed feature-hashing
//! embedder used offline. Both are normally wrapped in a [`CachedEmbedder`].

mod cache;
mod local;
mod remote;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, CachedEmbedder};
pub use local::{tokenize, LocalReferenceEmbedder, LOCAL_PROVIDER_ID};
pub use remote::{RemoteEmbedder, REMOTE_PROVIDER_ID};

pub const EMBEDDING_API_KEY_ENV: &str = "EMBEDDING_API_KEY";

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding provider unavailable after {attempts} attempts: {reason}")]
    ProviderUnavailable { attempts: u32, reason: String },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vectors from different models cannot be compared: {left} vs {right}")]
    IncompatibleVectors { left: String, right: String },
    #[error("invalid embedding: {0}")]
    InvalidVector(String),
    #[error("invalid embedding configuration: {0}")]
    InvalidConfig(String),
    #[error("embedding cache error: {0}")]
    Cache(String),
}

pub type Result<T> = std::result::Result<T, EmbeddingError>;

/// Fixed-dimension embedding tagged with the provider and model that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f32>,
    dim: usize,
    provider_id: String,
    model_id: String,
    /// Zero vector produced for text with no usable content.
    #[serde(default)]
    degenerate: bool,
}

impl EmbeddingVector {
    pub fn new(
        values: Vec<f32>,
        provider_id: impl Into<String>,
        model_id: impl Into<String>,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(EmbeddingError::InvalidVector("dimension must be at least 1".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::InvalidVector(format!(
                "non-finite value at position {pos}"
            )));
        }
        let degenerate = values.iter().all(|&v| v == 0.0);
        Ok(Self {
            dim: values.len(),
            values,
            provider_id: provider_id.into(),
            model_id: model_id.into(),
            degenerate,
        })
    }

    /// All-zero vector, flagged degenerate.
    pub fn zero(dim: usize, provider_id: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            values: vec![0.0; dim.max(1)],
            dim: dim.max(1),
            provider_id: provider_id.into(),
            model_id: model_id.into(),
            degenerate: true,
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Reject deserialized vectors whose declared shape does not match their data.
    pub fn validate(&self) -> Result<()> {
        if self.dim != self.values.len() || self.dim == 0 {
            return Err(EmbeddingError::InvalidVector(format!(
                "declared dim {} but {} values",
                self.dim,
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::InvalidVector("non-finite value".into()));
        }
        Ok(())
    }
}

/// Cosine similarity with a flag for the zero-norm case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineScore {
    pub value: f64,
    pub degenerate: bool,
}

/// Cosine similarity of two embeddings from the same provider, model and dimension.
///
/// Products are accumulated in `f64` in index order, so the result is exactly
/// symmetric. A zero-norm operand yields 0 with the degenerate flag set.
pub fn cosine_score(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<CosineScore> {
    if a.dim != b.dim {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dim,
            found: b.dim,
        });
    }
    if a.provider_id != b.provider_id || a.model_id != b.model_id {
        return Err(EmbeddingError::IncompatibleVectors {
            left: format!("{}/{}", a.provider_id, a.model_id),
            right: format!("{}/{}", b.provider_id, b.model_id),
        });
    }
    Ok(cosine_slices(&a.values, &b.values))
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    cosine_score(a, b).map(|s| s.value)
}

fn cosine_slices(a: &[f32], b: &[f32]) -> CosineScore {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return CosineScore {
            value: 0.0,
            degenerate: true,
        };
    }
    let value = dot / (na.sqrt() * nb.sqrt());
    CosineScore {
        value: value.clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Source of embeddings. Output order always matches input order.
pub trait Embedder: Send + Sync {
    fn provider_id(&self) -> &str;
    fn model_id(&self) -> &str;
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut out = self.embed_batch(&[text])?;
        out.pop()
            .ok_or_else(|| EmbeddingError::InvalidVector("provider returned no vector".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Remote,
    #[default]
    LocalReference,
}

fn default_model_id() -> String {
    "hash-256".to_string()
}
fn default_dim() -> usize {
    256
}
fn default_batch_size() -> usize {
    32
}
fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingProviderConfig {
    #[serde(default)]
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default = "default_model_id")]
    pub model_id: String,
    /// Output dimension of the local reference embedder.
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Maximum in-flight requests for the remote provider.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub cache_path: Option<PathBuf>,
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::LocalReference,
            endpoint_url: None,
            model_id: default_model_id(),
            dim: default_dim(),
            batch_size: default_batch_size(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            concurrency: default_concurrency(),
            cache_path: None,
        }
    }
}

impl EmbeddingProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(EmbeddingError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.dim == 0 {
            return Err(EmbeddingError::InvalidConfig("dim must be >= 1".into()));
        }
        if self.kind == ProviderKind::Remote && self.endpoint_url.is_none() {
            return Err(EmbeddingError::InvalidConfig(
                "remote provider requires endpoint_url".into(),
            ));
        }
        Ok(())
    }
}

/// Build the configured provider wrapped in a cache.
pub fn build_embedder(config: &EmbeddingProviderConfig) -> Result<CachedEmbedder> {
    config.validate()?;
    let inner: Box<dyn Embedder> = match config.kind {
        ProviderKind::LocalReference => {
            Box::new(LocalReferenceEmbedder::new(config.model_id.clone(), config.dim))
        }
        ProviderKind::Remote => Box::new(RemoteEmbedder::from_config(config)?),
    };
    CachedEmbedder::new(inner, config.cache_path.clone())
}
