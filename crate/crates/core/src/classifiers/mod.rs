//! Ensemble classifiers: a bagged Gini forest with balanced class weights,
//! Newton gradient-boosted trees on (multiclass) log-loss, and a boosted variant
//! that replaces one-hot categorical blocks with ordered target statistics.

mod boosting;
mod forest;
mod ordered_ts;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::CategoricalGroup;
use crate::matrix::Matrix;

pub use boosting::{gbt_fit, log_loss};
pub use forest::{balanced_class_weights, rf_fit};
pub use ordered_ts::{
    ordered_target_encode, ordered_target_encode_with_order, ordered_target_encode_with_prior, seeded_order,
    OrderedTsEncoder,
};
pub use tree::TreeNode;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training labels contain a single class")]
    SingleClassTraining,
    #[error("expected {expected} feature columns, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("training set is empty or too small ({0} rows)")]
    TooFewSamples(usize),
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("invalid classifier config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, ClassifierError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    RandomForest,
    Gbt,
    GbtOrderedTs,
}

impl ClassifierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::RandomForest => "random_forest",
            ClassifierKind::Gbt => "gbt",
            ClassifierKind::GbtOrderedTs => "gbt_ordered_ts",
        }
    }

    /// Display label used in reports and figure titles.
    pub fn label(self) -> &'static str {
        match self {
            ClassifierKind::RandomForest => "random_forest",
            ClassifierKind::Gbt => "gbt",
            ClassifierKind::GbtOrderedTs => "gbt_ordered_ts (CatBoost-flavored)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeight {
    None,
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubsample {
    Sqrt,
    All,
}

/// Hyperparameters. Omitted JSON fields take the defaults of the chosen `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawClassifierConfig")]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    /// Report identifier; defaults to the kind name.
    pub name: Option<String>,
    pub trees: usize,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub learning_rate: f64,
    pub class_weight: ClassWeight,
    pub subsample_features: FeatureSubsample,
    pub min_child_weight: f64,
    pub lambda_l2: f64,
    pub min_samples_split: usize,
    /// Prior weight `a` of the ordered target statistic.
    pub ts_prior_weight: f64,
    pub seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClassifierConfig {
    kind: ClassifierKind,
    #[serde(default)]
    name: Option<String>,
    trees: Option<usize>,
    #[serde(default, deserialize_with = "explicit_null")]
    max_depth: Option<Option<usize>>,
    learning_rate: Option<f64>,
    class_weight: Option<ClassWeight>,
    subsample_features: Option<FeatureSubsample>,
    min_child_weight: Option<f64>,
    lambda_l2: Option<f64>,
    min_samples_split: Option<usize>,
    ts_prior_weight: Option<f64>,
    #[serde(default)]
    seed: u64,
}

/// Distinguishes an absent `max_depth` (kind default) from `null` (unlimited).
fn explicit_null<'de, D>(d: D) -> std::result::Result<Option<Option<usize>>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    Option::<usize>::deserialize(d).map(Some)
}

impl TryFrom<RawClassifierConfig> for ClassifierConfig {
    type Error = String;

    fn try_from(raw: RawClassifierConfig) -> std::result::Result<Self, String> {
        let base = ClassifierConfig::defaults(raw.kind, raw.seed);
        let cfg = ClassifierConfig {
            kind: raw.kind,
            name: raw.name,
            trees: raw.trees.unwrap_or(base.trees),
            max_depth: raw.max_depth.unwrap_or(base.max_depth),
            learning_rate: raw.learning_rate.unwrap_or(base.learning_rate),
            class_weight: raw.class_weight.unwrap_or(base.class_weight),
            subsample_features: raw.subsample_features.unwrap_or(base.subsample_features),
            min_child_weight: raw.min_child_weight.unwrap_or(base.min_child_weight),
            lambda_l2: raw.lambda_l2.unwrap_or(base.lambda_l2),
            min_samples_split: raw.min_samples_split.unwrap_or(base.min_samples_split),
            ts_prior_weight: raw.ts_prior_weight.unwrap_or(base.ts_prior_weight),
            seed: raw.seed,
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

impl ClassifierConfig {
    pub fn defaults(kind: ClassifierKind, seed: u64) -> Self {
        match kind {
            ClassifierKind::RandomForest => Self::random_forest(seed),
            ClassifierKind::Gbt => Self::gbt(seed),
            ClassifierKind::GbtOrderedTs => Self::gbt_ordered_ts(seed),
        }
    }

    /// 100 fully grown trees, balanced class weights, √q features per split.
    pub fn random_forest(seed: u64) -> Self {
        Self {
            kind: ClassifierKind::RandomForest,
            name: None,
            trees: 100,
            max_depth: None,
            learning_rate: 1.0,
            class_weight: ClassWeight::Balanced,
            subsample_features: FeatureSubsample::Sqrt,
            min_child_weight: 0.0,
            lambda_l2: 0.0,
            min_samples_split: 2,
            ts_prior_weight: 1.0,
            seed,
        }
    }

    /// 100 rounds, depth 6, learning rate 0.1, λ = 1, min_child_weight = 1.
    pub fn gbt(seed: u64) -> Self {
        Self {
            kind: ClassifierKind::Gbt,
            name: None,
            trees: 100,
            max_depth: Some(6),
            learning_rate: 0.1,
            class_weight: ClassWeight::None,
            subsample_features: FeatureSubsample::All,
            min_child_weight: 1.0,
            lambda_l2: 1.0,
            min_samples_split: 2,
            ts_prior_weight: 1.0,
            seed,
        }
    }

    pub fn gbt_ordered_ts(seed: u64) -> Self {
        Self {
            kind: ClassifierKind::GbtOrderedTs,
            ..Self::gbt(seed)
        }
    }

    pub fn id(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.kind.as_str().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ClassifierError::InvalidConfig(m.to_string()));
        match self.kind {
            ClassifierKind::RandomForest => {
                if self.trees == 0 {
                    return bad("random_forest needs at least one tree");
                }
                if self.min_samples_split < 2 {
                    return bad("min_samples_split must be at least 2");
                }
            }
            ClassifierKind::Gbt | ClassifierKind::GbtOrderedTs => {
                if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
                    return bad("learning_rate must be positive");
                }
                if self.lambda_l2 < 0.0 || self.min_child_weight < 0.0 {
                    return bad("lambda_l2 and min_child_weight must be non-negative");
                }
                if self.max_depth.is_none() {
                    return bad("boosted trees need a finite max_depth");
                }
                if self.ts_prior_weight.is_nan() || self.ts_prior_weight <= 0.0 {
                    return bad("ts_prior_weight must be positive");
                }
            }
        }
        Ok(())
    }
}

/// Inputs to a fit: feature matrix, labels in `[0, n_classes)`, column names and
/// the one-hot blocks (used only by the ordered-statistics variant).
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub x: &'a Matrix,
    pub y: &'a [usize],
    pub n_classes: usize,
    pub feature_names: &'a [String],
    pub categorical_groups: &'a [CategoricalGroup],
}

impl<'a> TrainingData<'a> {
    pub fn new(
        x: &'a Matrix,
        y: &'a [usize],
        n_classes: usize,
        feature_names: &'a [String],
    ) -> Self {
        Self {
            x,
            y,
            n_classes,
            feature_names,
            categorical_groups: &[],
        }
    }

    pub fn with_groups(mut self, groups: &'a [CategoricalGroup]) -> Self {
        self.categorical_groups = groups;
        self
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.x.rows() != self.y.len() {
            return Err(ClassifierError::WidthMismatch {
                expected: self.x.rows(),
                got: self.y.len(),
            });
        }
        if self.x.cols() != self.feature_names.len() {
            return Err(ClassifierError::WidthMismatch {
                expected: self.feature_names.len(),
                got: self.x.cols(),
            });
        }
        if self.y.len() < 2 {
            return Err(ClassifierError::TooFewSamples(self.y.len()));
        }
        if let Some(&label) = self.y.iter().find(|&&l| l >= self.n_classes) {
            return Err(ClassifierError::LabelOutOfRange {
                label,
                n_classes: self.n_classes,
            });
        }
        let first = self.y[0];
        if self.y.iter().all(|&l| l == first) {
            return Err(ClassifierError::SingleClassTraining);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub config: ClassifierConfig,
    pub n_classes: usize,
    /// Width of the matrices accepted by `predict_proba`.
    pub input_width: usize,
    /// Names of the features the trees split on (after any categorical re-encoding).
    pub feature_names: Vec<String>,
    /// Initial raw score: one log-odds value for binary boosting, per-class log
    /// priors for multiclass boosting, empty for forests.
    pub base_score: Vec<f64>,
    /// Forest: one tree per entry. Boosting: one entry per round holding one tree
    /// (binary) or one tree per class (multiclass).
    pub trees: Vec<Vec<TreeNode>>,
    pub importance: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub encoder: Option<OrderedTsEncoder>,
    /// Training log-loss after 0, 1, …, `rounds` boosting rounds (boosting only).
    #[serde(skip)]
    pub training_log_loss: Vec<f64>,
}

impl ClassifierModel {
    /// JSON dump: config, base score, trees and importance.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

pub fn fit(data: &TrainingData, config: &ClassifierConfig) -> Result<ClassifierModel> {
    match config.kind {
        ClassifierKind::RandomForest => rf_fit(data, config),
        ClassifierKind::Gbt | ClassifierKind::GbtOrderedTs => gbt_fit(data, config),
    }
}

/// `n × C` class probabilities; every row sums to 1.
pub fn predict_proba(model: &ClassifierModel, x: &Matrix) -> Result<Matrix> {
    if x.cols() != model.input_width {
        return Err(ClassifierError::WidthMismatch {
            expected: model.input_width,
            got: x.cols(),
        });
    }
    Ok(match model.config.kind {
        ClassifierKind::RandomForest => forest::predict(model, x),
        ClassifierKind::Gbt | ClassifierKind::GbtOrderedTs => boosting::predict(model, x),
    })
}

pub fn predict(model: &ClassifierModel, x: &Matrix) -> Result<Vec<usize>> {
    let proba = predict_proba(model, x)?;
    Ok(proba.iter_rows().map(argmax).collect())
}

/// First index of the maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Normalized importance per model feature (all zero when no tree ever split).
pub fn feature_importance(model: &ClassifierModel) -> Vec<f64> {
    model.importance.clone()
}

/// Feature indices by descending importance, ties by lower index.
pub fn ranked_features(importance: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..importance.len()).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    order
}

pub(crate) fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
    }
}
