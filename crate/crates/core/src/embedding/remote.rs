use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    Embedder, EmbeddingError, EmbeddingProviderConfig, EmbeddingVector, Result,
    EMBEDDING_API_KEY_ENV,
};

pub const REMOTE_PROVIDER_ID: &str = "remote";

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    inputs: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

/// HTTP embedding client: one POST of `{model, inputs}` per batch, answered by `{vectors}`.
pub struct RemoteEmbedder {
    client: reqwest::blocking::Client,
    endpoint: String,
    model_id: String,
    api_key: Option<String>,
    batch_size: usize,
    max_retries: u32,
    concurrency: usize,
    /// Dimension assumed for all-empty batches, which are never sent.
    fallback_dim: usize,
}

impl RemoteEmbedder {
    pub fn from_config(config: &EmbeddingProviderConfig) -> Result<Self> {
        let endpoint = config
            .endpoint_url
            .clone()
            .ok_or_else(|| EmbeddingError::InvalidConfig("remote provider requires endpoint_url".into()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| EmbeddingError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            client,
            endpoint,
            model_id: config.model_id.clone(),
            api_key: std::env::var(EMBEDDING_API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            batch_size: config.batch_size.max(1),
            max_retries: config.max_retries,
            concurrency: config.concurrency.max(1),
            fallback_dim: config.dim,
        })
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    fn post_batch(&self, inputs: &[&str]) -> Result<Vec<Vec<f32>>> {
        let attempts = self.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(50 * (1 << attempt.min(5))));
            }
            let mut req = self.client.post(&self.endpoint).json(&EmbedRequest {
                model: &self.model_id,
                inputs,
            });
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send().and_then(|r| r.error_for_status()) {
                Ok(resp) => match resp.json::<EmbedResponse>() {
                    Ok(body) if body.vectors.len() == inputs.len() => return Ok(body.vectors),
                    Ok(body) => {
                        last_error = format!(
                            "expected {} vectors, received {}",
                            inputs.len(),
                            body.vectors.len()
                        )
                    }
                    Err(e) => last_error = format!("malformed response: {e}"),
                },
                Err(e) => last_error = e.to_string(),
            }
            log::warn!("embedding request attempt {} failed: {last_error}", attempt + 1);
        }
        Err(EmbeddingError::ProviderUnavailable {
            attempts,
            reason: last_error,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn provider_id(&self) -> &str {
        REMOTE_PROVIDER_ID
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        // Empty texts follow the zero-vector rule and are not sent.
        let live: Vec<usize> = (0..texts.len())
            .filter(|&i| !texts[i].trim().is_empty())
            .collect();
        let live_texts: Vec<&str> = live.iter().map(|&i| texts[i]).collect();
        let chunks: Vec<&[&str]> = live_texts.chunks(self.batch_size).collect();

        let mut chunk_results: Vec<Option<Result<Vec<Vec<f32>>>>> =
            (0..chunks.len()).map(|_| None).collect();
        for wave_start in (0..chunks.len()).step_by(self.concurrency) {
            let wave_end = (wave_start + self.concurrency).min(chunks.len());
            thread::scope(|s| {
                let handles: Vec<_> = (wave_start..wave_end)
                    .map(|c| {
                        let chunk = chunks[c];
                        s.spawn(move || self.post_batch(chunk))
                    })
                    .collect();
                for (offset, h) in handles.into_iter().enumerate() {
                    let result = h.join().unwrap_or_else(|_| {
                        Err(EmbeddingError::ProviderUnavailable {
                            attempts: 0,
                            reason: "request thread panicked".into(),
                        })
                    });
                    chunk_results[wave_start + offset] = Some(result);
                }
            });
        }

        let mut vectors = Vec::with_capacity(live.len());
        for r in chunk_results {
            vectors.extend(r.expect("every chunk processed")?);
        }
        let dim = vectors.first().map_or(self.fallback_dim, Vec::len);
        let mut out: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        for (&i, values) in live.iter().zip(vectors) {
            if values.len() != dim {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: dim,
                    found: values.len(),
                });
            }
            out[i] = Some(EmbeddingVector::new(values, REMOTE_PROVIDER_ID, &self.model_id)?);
        }
        Ok(out
            .into_iter()
            .map(|v| v.unwrap_or_else(|| EmbeddingVector::zero(dim, REMOTE_PROVIDER_ID, &self.model_id)))
            .collect())
    }
}
