//! Text embedding backends, batch-wise corpus embedding and the persistent cache.
//!
//! Two backends are provided: a deterministic hashing embedder that needs no
//! network or model weights, and an HTTP client for an external embedding
//! service. Both sit behind [`EmbeddingBackend`]; [`embed_corpus`] consults the
//! [`EmbeddingCache`] for every text before calling the backend.

mod cache;
mod hash;
mod remote;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::textualize::TextCorpus;

pub use cache::EmbeddingCache;
pub use hash::{hash_embed_text, tokenize, HashBackend};
pub use remote::{remote_embed_batch, EmbedRequest, EmbedResponse, RemoteBackend};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding service unavailable after {attempts} attempts: {last_error}")]
    ServiceUnavailable { attempts: usize, last_error: String },
    #[error("service returned vectors of dimension {got}, descriptor declares {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding service does not know model {0:?}")]
    RemoteModelUnknown(String),
    #[error("embedding service rejected the request with status {status}: {body}")]
    RemoteRejected { status: u16, body: String },
    #[error("malformed service response: {0}")]
    BadResponse(String),
    #[error("embedding cache is corrupt: {0}")]
    CacheCorrupt(String),
    #[error("invalid backend descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("cannot embed an empty corpus")]
    EmptyCorpus,
    #[error("backend produced a non-finite value")]
    NonFinite,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EmbeddingError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    DeterministicHash,
    RemoteService,
}

fn default_batch_size() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingBackendDescriptor {
    pub kind: BackendKind,
    /// e.g. "gpt2", "roberta-base". Also the feature-name prefix in reports.
    pub model_id: String,
    pub dim: usize,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Hash backend only.
    #[serde(default)]
    pub seed: u64,
}

impl EmbeddingBackendDescriptor {
    pub fn hash(model_id: impl Into<String>, dim: usize, seed: u64) -> Self {
        Self {
            kind: BackendKind::DeterministicHash,
            model_id: model_id.into(),
            dim,
            endpoint: None,
            batch_size: default_batch_size(),
            seed,
        }
    }

    pub fn remote(model_id: impl Into<String>, dim: usize, endpoint: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::RemoteService,
            model_id: model_id.into(),
            dim,
            endpoint: Some(endpoint.into()),
            batch_size: default_batch_size(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(EmbeddingError::InvalidDescriptor(
                "dim must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(EmbeddingError::InvalidDescriptor(
                "batch_size must be positive".into(),
            ));
        }
        if self.model_id.is_empty() {
            return Err(EmbeddingError::InvalidDescriptor(
                "model_id is empty".into(),
            ));
        }
        match (self.kind, &self.endpoint) {
            (BackendKind::RemoteService, None) => Err(EmbeddingError::InvalidDescriptor(
                "remote_service backend requires an endpoint".into(),
            )),
            (BackendKind::DeterministicHash, Some(_)) => Err(EmbeddingError::InvalidDescriptor(
                "endpoint is only valid for remote_service backends".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Model component of cache keys. Hash embeddings depend on `dim` and `seed`,
    /// so those are folded in to keep differently-seeded stand-ins apart.
    pub fn cache_model_id(&self) -> String {
        match self.kind {
            BackendKind::DeterministicHash => {
                format!("{}@hash-d{}-s{}", self.model_id, self.dim, self.seed)
            }
            BackendKind::RemoteService => self.model_id.clone(),
        }
    }
}

pub trait EmbeddingBackend: Send + Sync {
    fn descriptor(&self) -> &EmbeddingBackendDescriptor;

    /// One vector per text, in input order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

pub fn backend_for(descriptor: &EmbeddingBackendDescriptor) -> Result<Box<dyn EmbeddingBackend>> {
    descriptor.validate()?;
    Ok(match descriptor.kind {
        BackendKind::DeterministicHash => Box::new(HashBackend::new(descriptor.clone())?),
        BackendKind::RemoteService => Box::new(RemoteBackend::new(descriptor.clone())?),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub backend: EmbeddingBackendDescriptor,
    pub values: Matrix,
    pub corpus_fingerprint: String,
}

pub fn corpus_fingerprint(corpus: &TextCorpus) -> String {
    let mut h = Sha256::new();
    h.update(corpus.template_version.as_bytes());
    h.update([0u8]);
    for t in &corpus.texts {
        h.update(t.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

/// Embeds every corpus text, reading through the cache. Cold texts are sent to the
/// backend in sequential batches of at most `batch_size`.
pub fn embed_corpus(
    backend: &dyn EmbeddingBackend,
    corpus: &TextCorpus,
    cache: &EmbeddingCache,
) -> Result<EmbeddingMatrix> {
    if corpus.is_empty() {
        return Err(EmbeddingError::EmptyCorpus);
    }
    let desc = backend.descriptor();
    let model = desc.cache_model_id();
    let keys: Vec<String> = corpus
        .texts
        .iter()
        .map(|t| EmbeddingCache::key(&model, &corpus.template_version, t))
        .collect();

    let mut resolved: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut cold: Vec<usize> = Vec::new();
    for (i, key) in keys.iter().enumerate() {
        if resolved.contains_key(key.as_str()) || cold.iter().any(|&c| keys[c] == *key) {
            continue;
        }
        match cache.get(key) {
            Some(v) => {
                resolved.insert(key, v);
            }
            None => cold.push(i),
        }
    }

    for chunk in cold.chunks(desc.batch_size) {
        let texts: Vec<String> = chunk.iter().map(|&i| corpus.texts[i].clone()).collect();
        let vectors = backend.embed_batch(&texts)?;
        if vectors.len() != texts.len() {
            return Err(EmbeddingError::BadResponse(format!(
                "backend returned {} vectors for {} texts",
                vectors.len(),
                texts.len()
            )));
        }
        let mut entries = Vec::with_capacity(chunk.len());
        for (&i, v) in chunk.iter().zip(vectors) {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EmbeddingError::NonFinite);
            }
            entries.push((keys[i].clone(), v));
        }
        for (key, v) in cache.insert_many(entries)? {
            let slot = keys
                .iter()
                .find(|k| **k == key)
                .expect("key from this corpus");
            resolved.insert(slot.as_str(), v);
        }
    }

    let mut values = Matrix::zeros(corpus.len(), desc.dim);
    for (i, key) in keys.iter().enumerate() {
        let v = &resolved[key.as_str()];
        if v.len() != desc.dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: desc.dim,
                got: v.len(),
            });
        }
        values.row_mut(i).copy_from_slice(v);
    }
    Ok(EmbeddingMatrix {
        backend: desc.clone(),
        values,
        corpus_fingerprint: corpus_fingerprint(corpus),
    })
}
