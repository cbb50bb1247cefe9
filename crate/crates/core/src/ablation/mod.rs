//! Ablation harness: the seven feature subsets, the cross-validated run over
//! every (dataset × classifier × subset) cell, and the derived significance
//! matrices, win counts and importance reports.

mod analysis;
mod config;
mod run;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::ClassifierError;
use crate::data::{CategoricalGroup, DataError, FeatureMatrix};
use crate::embeddings::EmbeddingError;
use crate::evaluation::{EvaluationError, Metric, MetricsRecord};
use crate::matrix::Matrix;
use crate::reduction::{ImportanceRanking, ReductionError};

pub use analysis::{
    significance_matrices, significance_matrix, top_features_report, ttest_rows, win_counts,
    SignificanceMatrix, TTestRow, WinCounts,
};
pub use config::{AblationConfig, TsneSettings};
pub use run::{run_ablation, run_ablation_with};

#[derive(Debug, Error)]
pub enum AblationError {
    #[error("invalid ablation config: {0}")]
    InvalidConfig(String),
    #[error("row count mismatch: baseline has {baseline} rows, embedding block {block} has {got}")]
    RowCountMismatch {
        baseline: usize,
        block: usize,
        got: usize,
    },
    #[error("subset {subset} needs embedding backend #{index}, only {available} configured")]
    MissingBackend {
        subset: FeatureSubsetId,
        index: usize,
        available: usize,
    },
    #[error("report incomplete: {0}")]
    IncompleteReport(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AblationError>;

/// The seven feature subsets in canonical order. The first embedding backend of
/// the run config fills the `GPT2` slot, the second the `RoBERTa` slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureSubsetId {
    #[serde(rename = "Baseline")]
    Baseline,
    #[serde(rename = "GPT2_Selected")]
    Gpt2Selected,
    #[serde(rename = "RoBERTa_Selected")]
    RobertaSelected,
    #[serde(rename = "Baseline_GPT2_Selected")]
    BaselineGpt2Selected,
    #[serde(rename = "Baseline_RoBERTa_Selected")]
    BaselineRobertaSelected,
    #[serde(rename = "GPT2_RoBERTa_Selected")]
    Gpt2RobertaSelected,
    #[serde(rename = "Baseline_GPT2_RoBERTa_Selected")]
    BaselineGpt2RobertaSelected,
}

impl FeatureSubsetId {
    pub const ALL: [FeatureSubsetId; 7] = [
        FeatureSubsetId::Baseline,
        FeatureSubsetId::Gpt2Selected,
        FeatureSubsetId::RobertaSelected,
        FeatureSubsetId::BaselineGpt2Selected,
        FeatureSubsetId::BaselineRobertaSelected,
        FeatureSubsetId::Gpt2RobertaSelected,
        FeatureSubsetId::BaselineGpt2RobertaSelected,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSubsetId::Baseline => "Baseline",
            FeatureSubsetId::Gpt2Selected => "GPT2_Selected",
            FeatureSubsetId::RobertaSelected => "RoBERTa_Selected",
            FeatureSubsetId::BaselineGpt2Selected => "Baseline_GPT2_Selected",
            FeatureSubsetId::BaselineRobertaSelected => "Baseline_RoBERTa_Selected",
            FeatureSubsetId::Gpt2RobertaSelected => "GPT2_RoBERTa_Selected",
            FeatureSubsetId::BaselineGpt2RobertaSelected => "Baseline_GPT2_RoBERTa_Selected",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.as_str() == s)
    }

    pub fn includes_baseline(self) -> bool {
        matches!(
            self,
            FeatureSubsetId::Baseline
                | FeatureSubsetId::BaselineGpt2Selected
                | FeatureSubsetId::BaselineRobertaSelected
                | FeatureSubsetId::BaselineGpt2RobertaSelected
        )
    }

    /// Positions in the backend list whose selected block this subset appends.
    pub fn backends(self) -> &'static [usize] {
        match self {
            FeatureSubsetId::Baseline => &[],
            FeatureSubsetId::Gpt2Selected | FeatureSubsetId::BaselineGpt2Selected => &[0],
            FeatureSubsetId::RobertaSelected | FeatureSubsetId::BaselineRobertaSelected => &[1],
            FeatureSubsetId::Gpt2RobertaSelected | FeatureSubsetId::BaselineGpt2RobertaSelected => {
                &[0, 1]
            }
        }
    }

    /// Subsets that can be formed from `k` backends, in canonical order.
    pub fn available(k: usize) -> Vec<FeatureSubsetId> {
        Self::ALL
            .into_iter()
            .filter(|id| id.backends().iter().all(|&b| b < k))
            .collect()
    }

    /// Expected width given baseline width `p` and per-backend selection width `m`.
    pub fn width(self, p: usize, m: usize) -> usize {
        usize::from(self.includes_baseline()) * p + self.backends().len() * m
    }
}

impl fmt::Display for FeatureSubsetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Top-`m` PCA components of one backend's embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedEmbedding {
    pub model_id: String,
    /// `<model>_pc<j>` with `j` the 1-based principal-component index.
    pub names: Vec<String>,
    pub values: Matrix,
    pub ranking: ImportanceRanking,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetMatrix {
    pub id: FeatureSubsetId,
    pub names: Vec<String>,
    pub values: Matrix,
    /// One-hot blocks of the baseline part (empty without baseline columns).
    pub categorical_groups: Vec<CategoricalGroup>,
}

/// Baseline block first (when included), then backend blocks in list order.
pub fn assemble_subset(
    baseline: &FeatureMatrix,
    selected: &[SelectedEmbedding],
    id: FeatureSubsetId,
) -> Result<SubsetMatrix> {
    let n = baseline.values.rows();
    let mut blocks: Vec<&Matrix> = Vec::new();
    let mut names = Vec::new();
    let mut categorical_groups = Vec::new();
    if id.includes_baseline() {
        blocks.push(&baseline.values);
        names.extend(baseline.names.iter().cloned());
        categorical_groups = baseline.categorical_groups.clone();
    }
    for &b in id.backends() {
        let block = selected.get(b).ok_or(AblationError::MissingBackend {
            subset: id,
            index: b,
            available: selected.len(),
        })?;
        if block.values.rows() != n {
            return Err(AblationError::RowCountMismatch {
                baseline: n,
                block: b,
                got: block.values.rows(),
            });
        }
        blocks.push(&block.values);
        names.extend(block.names.iter().cloned());
    }
    let values = if blocks.is_empty() {
        Matrix::zeros(n, 0)
    } else {
        Matrix::hstack(&blocks).expect("row counts checked")
    };
    Ok(SubsetMatrix {
        id,
        names,
        values,
        categorical_groups,
    })
}

/// Whether embedding-derived features were fitted on all rows before cross-validation
/// (`full_data`) or on each fold's training rows only (`fold_safe`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    FullData,
    FoldSafe,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::FullData => "full_data",
            Protocol::FoldSafe => "fold_safe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dataset: String,
    pub classifier: String,
    pub subset: FeatureSubsetId,
    pub width: usize,
    pub fold_metrics: Vec<MetricsRecord>,
    pub mean: MetricsRecord,
    /// Top features of the full-data fit.
    pub top_features: Vec<(String, f64)>,
    /// Full importance vector of every fold model, with the fold's feature names.
    pub fold_importance: Vec<Vec<(String, f64)>>,
    /// Out-of-fold class probabilities, `n × C` in row order.
    pub oof_scores: Matrix,
}

impl CellResult {
    pub fn fold_values(&self, metric: Metric) -> Vec<f64> {
        self.fold_metrics.iter().map(|m| m.get(metric)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub dataset: String,
    /// `None` when the whole dataset failed before any cell ran.
    pub classifier: Option<String>,
    pub subset: Option<FeatureSubsetId>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSummary {
    pub model_id: String,
    pub corpus_fingerprint: String,
    pub embedding_dim: usize,
    pub pca_d: usize,
    /// Explained variance share of each kept component (full-data fit).
    pub explained_variance_ratio: Vec<f64>,
    pub selected_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub id: String,
    pub rows: usize,
    pub baseline_width: usize,
    pub class_names: Vec<String>,
    pub labels: Vec<usize>,
    pub backends: Vec<BackendSummary>,
    pub subset_widths: Vec<(FeatureSubsetId, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub protocol: Protocol,
    pub cells: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
}

impl ProtocolReport {
    pub fn cell(
        &self,
        dataset: &str,
        classifier: &str,
        subset: FeatureSubsetId,
    ) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.dataset == dataset && c.classifier == classifier && c.subset == subset)
    }
}

/// 2-D t-SNE map of one backend's PCA-reduced embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub dataset: String,
    pub model_id: String,
    pub points: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub template_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub fold_safe: bool,
    pub started_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config: AblationConfig,
    pub datasets: Vec<DatasetSummary>,
    /// `full_data` first; `fold_safe` follows when enabled.
    pub protocols: Vec<ProtocolReport>,
    pub projections: Vec<Projection>,
    pub manifest: RunManifest,
}

impl AblationReport {
    pub fn protocol(&self, protocol: Protocol) -> Option<&ProtocolReport> {
        self.protocols.iter().find(|p| p.protocol == protocol)
    }

    /// The results that follow the reference order of operations.
    pub fn primary(&self) -> &ProtocolReport {
        &self.protocols[0]
    }

    pub fn subsets(&self) -> Vec<FeatureSubsetId> {
        FeatureSubsetId::available(self.config.backends.len())
    }

    pub fn classifier_ids(&self) -> Vec<String> {
        self.config.classifiers.iter().map(|c| c.id()).collect()
    }

    pub fn dataset_ids(&self) -> Vec<String> {
        self.datasets.iter().map(|d| d.id.clone()).collect()
    }
}
