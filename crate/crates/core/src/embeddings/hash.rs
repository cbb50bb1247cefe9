//! Deterministic bag-of-tokens embedder used as the offline backend.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::{EmbeddingBackend, EmbeddingBackendDescriptor, EmbeddingError, Result};

/// Lowercased tokens, split on whitespace and punctuation.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn token_hash(token: &str) -> u64 {
    let digest = Sha256::digest(token.as_bytes());
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

fn add_token_vector(acc: &mut [f64], seed: u64, token: &str) {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&token_hash(token).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    for a in acc.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *a += z;
    }
}

/// Mean of per-token standard-normal vectors; each token's vector comes from a
/// ChaCha stream keyed by `(seed, token hash)`. Empty text gives the zero vector.
pub fn hash_embed_text(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let mut count = 0usize;
    for token in tokenize(text) {
        add_token_vector(&mut acc, seed, &token);
        count += 1;
    }
    let denom = count.max(1) as f64;
    acc.iter_mut().for_each(|a| *a /= denom);
    acc
}

#[derive(Debug, Clone)]
pub struct HashBackend {
    descriptor: EmbeddingBackendDescriptor,
}

impl HashBackend {
    pub fn new(descriptor: EmbeddingBackendDescriptor) -> Result<Self> {
        descriptor.validate()?;
        if descriptor.kind != super::BackendKind::DeterministicHash {
            return Err(EmbeddingError::InvalidDescriptor(
                "HashBackend needs a deterministic_hash descriptor".into(),
            ));
        }
        Ok(Self { descriptor })
    }
}

impl EmbeddingBackend for HashBackend {
    fn descriptor(&self) -> &EmbeddingBackendDescriptor {
        &self.descriptor
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts
            .iter()
            .map(|t| hash_embed_text(t, self.descriptor.dim, self.descriptor.seed))
            .collect())
    }
}
