//! HTTP client for an external embedding service.
//!
//! Wire format: `POST {endpoint}/v1/embed` with `{"model": .., "texts": [..]}`,
//! answered by `{"model": .., "dim": .., "embeddings": [[..]], "truncated": [..]}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{BackendKind, EmbeddingBackend, EmbeddingBackendDescriptor, EmbeddingError, Result};

pub const MAX_ATTEMPTS: usize = 3;
pub const INITIAL_BACKOFF: Duration = Duration::from_millis(250);
const RESPONSE_LIMIT: u64 = 512 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub model: String,
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub model: String,
    pub dim: usize,
    pub embeddings: Vec<Vec<f64>>,
    #[serde(default)]
    pub truncated: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    descriptor: EmbeddingBackendDescriptor,
    agent: Agent,
    initial_backoff: Duration,
}

enum Attempt {
    Retry(String),
    Fatal(EmbeddingError),
}

impl RemoteBackend {
    pub fn new(descriptor: EmbeddingBackendDescriptor) -> Result<Self> {
        descriptor.validate()?;
        if descriptor.kind != BackendKind::RemoteService {
            return Err(EmbeddingError::InvalidDescriptor(
                "RemoteBackend needs a remote_service descriptor".into(),
            ));
        }
        let config = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(300)))
            .build();
        Ok(Self {
            descriptor,
            agent: Agent::new_with_config(config),
            initial_backoff: INITIAL_BACKOFF,
        })
    }

    /// Overrides the first retry delay (doubles after each failed attempt).
    pub fn with_initial_backoff(mut self, backoff: Duration) -> Self {
        self.initial_backoff = backoff;
        self
    }

    fn url(&self) -> String {
        let base = self.descriptor.endpoint.as_deref().unwrap_or_default();
        format!("{}/v1/embed", base.trim_end_matches('/'))
    }

    fn attempt(&self, body: &str) -> std::result::Result<EmbedResponse, Attempt> {
        let mut resp = self
            .agent
            .post(&self.url())
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(RESPONSE_LIMIT)
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| Attempt::Fatal(EmbeddingError::BadResponse(e.to_string()))),
            404 => Err(Attempt::Fatal(EmbeddingError::RemoteModelUnknown(
                self.descriptor.model_id.clone(),
            ))),
            500..=599 => Err(Attempt::Retry(format!("status {status}: {text}"))),
            _ => Err(Attempt::Fatal(EmbeddingError::RemoteRejected {
                status,
                body: text,
            })),
        }
    }

    fn send_with_retry(&self, body: &str) -> Result<EmbedResponse> {
        let mut delay = self.initial_backoff;
        let mut last_error = String::new();
        for attempt in 1..=MAX_ATTEMPTS {
            match self.attempt(body) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("embedding request attempt {attempt}/{MAX_ATTEMPTS} failed: {msg}");
                    last_error = msg;
                    if attempt < MAX_ATTEMPTS {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(EmbeddingError::ServiceUnavailable {
            attempts: MAX_ATTEMPTS,
            last_error,
        })
    }
}

/// Sends one batch to the service and checks the response shape against the descriptor.
pub fn remote_embed_batch(backend: &RemoteBackend, texts: &[String]) -> Result<Vec<Vec<f64>>> {
    let desc = &backend.descriptor;
    if texts.is_empty() {
        return Err(EmbeddingError::InvalidBatch("no texts".into()));
    }
    if texts.len() > desc.batch_size {
        return Err(EmbeddingError::InvalidBatch(format!(
            "{} texts exceed batch_size {}",
            texts.len(),
            desc.batch_size
        )));
    }
    let body = serde_json::to_string(&EmbedRequest {
        model: desc.model_id.clone(),
        texts: texts.to_vec(),
    })
    .map_err(|e| EmbeddingError::BadResponse(e.to_string()))?;
    let resp = backend.send_with_retry(&body)?;
    if resp.dim != desc.dim {
        return Err(EmbeddingError::DimensionMismatch {
            expected: desc.dim,
            got: resp.dim,
        });
    }
    if resp.embeddings.len() != texts.len() {
        return Err(EmbeddingError::BadResponse(format!(
            "{} vectors for {} texts",
            resp.embeddings.len(),
            texts.len()
        )));
    }
    if let Some(v) = resp.embeddings.iter().find(|v| v.len() != desc.dim) {
        return Err(EmbeddingError::DimensionMismatch {
            expected: desc.dim,
            got: v.len(),
        });
    }
    if resp.truncated.iter().any(|&t| t) {
        log::info!(
            "{} of {} texts were truncated by the service",
            resp.truncated.iter().filter(|&&t| t).count(),
            texts.len()
        );
    }
    Ok(resp.embeddings)
}

impl EmbeddingBackend for RemoteBackend {
    fn descriptor(&self) -> &EmbeddingBackendDescriptor {
        &self.descriptor
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        remote_embed_batch(self, texts)
    }
}
