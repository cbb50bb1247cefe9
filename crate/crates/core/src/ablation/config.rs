use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AblationError, Result};
use crate::classifiers::ClassifierConfig;
use crate::data::DatasetConfig;
use crate::embeddings::EmbeddingBackendDescriptor;

fn default_pca_d() -> usize {
    50
}
fn default_top_m() -> usize {
    10
}
fn default_folds() -> usize {
    5
}
fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsneSettings {
    #[serde(default = "default_perplexity")]
    pub perplexity: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
}

fn default_perplexity() -> f64 {
    30.0
}
fn default_iterations() -> usize {
    1000
}

/// Run config: one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub datasets: Vec<DatasetConfig>,
    pub backends: Vec<EmbeddingBackendDescriptor>,
    pub classifiers: Vec<ClassifierConfig>,
    #[serde(default = "default_pca_d")]
    pub pca_d: usize,
    #[serde(default = "default_top_m")]
    pub top_m: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fold_safe: bool,
    /// When set, every backend's PCA output is also projected to 2-D.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tsne: Option<TsneSettings>,
}

impl AblationConfig {
    /// Parses and validates; relative dataset paths resolve against the config's directory.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg: AblationConfig = serde_json::from_str(&text)?;
        if let Some(dir) = path.parent() {
            for d in &mut cfg.datasets {
                d.resolve_relative_to(dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AblationError::InvalidConfig(m));
        if self.datasets.is_empty() {
            return bad("at least one dataset is required".into());
        }
        if self.classifiers.is_empty() {
            return bad("at least one classifier is required".into());
        }
        if !(1..=2).contains(&self.backends.len()) {
            return bad(format!(
                "expected 1 or 2 embedding backends, got {}",
                self.backends.len()
            ));
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.pca_d == 0 || self.top_m == 0 {
            return bad("pca_d and top_m must be positive".into());
        }
        if let Some(t) = &self.tsne {
            if t.perplexity.is_nan() || t.perplexity < 1.0 || t.iterations == 0 {
                return bad("tsne needs perplexity >= 1 and iterations > 0".into());
            }
        }
        let mut ids = HashSet::new();
        for d in &self.datasets {
            d.validate()?;
            if !ids.insert(d.dataset_id()) {
                return bad(format!("duplicate dataset id {:?}", d.dataset_id()));
            }
        }
        let mut models = HashSet::new();
        for b in &self.backends {
            b.validate()?;
            if !models.insert(b.model_id.as_str()) {
                return bad(format!("duplicate backend model_id {:?}", b.model_id));
            }
        }
        let mut names = HashSet::new();
        for c in &self.classifiers {
            c.validate()?;
            if !names.insert(c.id()) {
                return bad(format!("duplicate classifier name {:?}", c.id()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
