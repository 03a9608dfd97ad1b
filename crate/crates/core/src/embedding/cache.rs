use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::{Embedder, EmbeddingError, EmbeddingVector, Result};

/// Hex SHA-256 of `model_id ‖ text`.
pub fn cache_key(model_id: &str, text: &str) -> String {
    let mut h = Sha256::new();
    h.update(model_id.as_bytes());
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

/// Memoizing wrapper with an optional on-disk layer (one JSON file per key).
///
/// Disk writes go through a temporary file and a rename, so concurrent
/// writers of the same key leave one complete file behind.
pub struct CachedEmbedder {
    inner: Box<dyn Embedder>,
    dir: Option<PathBuf>,
    memo: Mutex<HashMap<String, EmbeddingVector>>,
}

impl CachedEmbedder {
    pub fn new(inner: Box<dyn Embedder>, dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            fs::create_dir_all(d).map_err(|e| EmbeddingError::Cache(format!("{}: {e}", d.display())))?;
        }
        Ok(Self {
            inner,
            dir,
            memo: Mutex::new(HashMap::new()),
        })
    }

    fn read_disk(&self, dir: &Path, key: &str) -> Option<EmbeddingVector> {
        let bytes = fs::read(dir.join(key)).ok()?;
        let v: EmbeddingVector = serde_json::from_slice(&bytes).ok()?;
        let matches_model = v.model_id() == self.inner.model_id()
            && v.provider_id() == self.inner.provider_id();
        (v.validate().is_ok() && matches_model).then_some(v)
    }

    fn write_disk(&self, dir: &Path, key: &str, v: &EmbeddingVector) -> Result<()> {
        let mut tmp = tempfile::NamedTempFile::new_in(dir)
            .map_err(|e| EmbeddingError::Cache(e.to_string()))?;
        let json = serde_json::to_vec(v).expect("vector serializes");
        tmp.write_all(&json)
            .map_err(|e| EmbeddingError::Cache(e.to_string()))?;
        tmp.persist(dir.join(key))
            .map_err(|e| EmbeddingError::Cache(e.to_string()))?;
        Ok(())
    }
}

impl Embedder for CachedEmbedder {
    fn provider_id(&self) -> &str {
        self.inner.provider_id()
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let model = self.inner.model_id();
        let keys: Vec<String> = texts.iter().map(|t| cache_key(model, t)).collect();
        let mut found: Vec<Option<EmbeddingVector>> = {
            let memo = self.memo.lock().expect("memo lock");
            keys.iter().map(|k| memo.get(k).cloned()).collect()
        };
        if let Some(dir) = &self.dir {
            for (slot, key) in found.iter_mut().zip(&keys) {
                if slot.is_none() {
                    *slot = self.read_disk(dir, key);
                }
            }
        }

        // Embed each distinct missing text once.
        let mut missing: Vec<usize> = Vec::new();
        let mut seen: HashMap<&str, ()> = HashMap::new();
        for (i, slot) in found.iter().enumerate() {
            if slot.is_none() && seen.insert(keys[i].as_str(), ()).is_none() {
                missing.push(i);
            }
        }
        if !missing.is_empty() {
            let miss_texts: Vec<&str> = missing.iter().map(|&i| texts[i]).collect();
            let fresh = self.inner.embed_batch(&miss_texts)?;
            let mut by_key: HashMap<&str, EmbeddingVector> = HashMap::new();
            for (&i, v) in missing.iter().zip(fresh) {
                if let Some(dir) = &self.dir {
                    if let Err(e) = self.write_disk(dir, &keys[i], &v) {
                        log::warn!("embedding cache write failed: {e}");
                    }
                }
                by_key.insert(keys[i].as_str(), v);
            }
            for (i, slot) in found.iter_mut().enumerate() {
                if slot.is_none() {
                    *slot = by_key.get(keys[i].as_str()).cloned();
                }
            }
        }

        let mut memo = self.memo.lock().expect("memo lock");
        Ok(found
            .into_iter()
            .zip(keys)
            .map(|(v, k)| {
                let v = v.expect("all slots filled");
                memo.entry(k).or_insert_with(|| v.clone());
                v
            })
            .collect())
    }
}
