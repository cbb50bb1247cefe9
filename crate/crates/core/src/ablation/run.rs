use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;

use super::analysis::top_features_report;
use super::{
    assemble_subset, AblationConfig, AblationError, AblationReport, BackendSummary, CellFailure,
    CellResult, DatasetSummary, FeatureSubsetId, Projection, Protocol, ProtocolReport, Result,
    RunManifest, SelectedEmbedding, SubsetMatrix,
};
use crate::classifiers::{self, argmax, ClassifierConfig, TrainingData};
use crate::data::{prepare, LabelVector, PreparedDataset};
use crate::embeddings::{
    backend_for, embed_corpus, EmbeddingBackend, EmbeddingCache, EmbeddingMatrix,
};
use crate::evaluation::{compute_metrics, stratified_kfold, FoldSplit, Metric, MetricsRecord};
use crate::matrix::Matrix;
use crate::reduction::{
    self, max_components, pca_fit, pca_transform, select_top_features, TsneParams,
};
use crate::textualize::{build_corpus, TEMPLATE_VERSION};

/// Number of features listed per cell in importance reports.
const TOP_FEATURES: usize = 10;

/// Runs the full ablation with backends built from the config's descriptors.
pub fn run_ablation(config: &AblationConfig, cache: &EmbeddingCache) -> Result<AblationReport> {
    config.validate()?;
    let built = config
        .backends
        .iter()
        .map(backend_for)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let refs: Vec<&dyn EmbeddingBackend> = built.iter().map(|b| b.as_ref()).collect();
    run_ablation_with(config, &refs, cache)
}

/// Same as [`run_ablation`] with caller-supplied backends (one per descriptor, same order).
///
/// Errors in one dataset or one cell are recorded as failures in the report; only
/// an invalid config aborts the run.
pub fn run_ablation_with(
    config: &AblationConfig,
    backends: &[&dyn EmbeddingBackend],
    cache: &EmbeddingCache,
) -> Result<AblationReport> {
    config.validate()?;
    if backends.len() != config.backends.len() {
        return Err(AblationError::InvalidConfig(format!(
            "{} backends supplied for {} descriptors",
            backends.len(),
            config.backends.len()
        )));
    }
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());

    let mut full = ProtocolReport {
        protocol: Protocol::FullData,
        cells: Vec::new(),
        failures: Vec::new(),
    };
    let mut safe = ProtocolReport {
        protocol: Protocol::FoldSafe,
        cells: Vec::new(),
        failures: Vec::new(),
    };
    let mut datasets = Vec::new();
    let mut projections = Vec::new();

    for ds_config in &config.datasets {
        let id = ds_config.dataset_id();
        log::info!("dataset {id}: preparing");
        let ctx = match DatasetContext::build(config, ds_config, backends, cache) {
            Ok(ctx) => ctx,
            Err(e) => {
                log::error!("dataset {id} failed: {e}");
                let failure = CellFailure {
                    dataset: id,
                    classifier: None,
                    subset: None,
                    error: e.to_string(),
                };
                full.failures.push(failure.clone());
                if config.fold_safe {
                    safe.failures.push(failure);
                }
                continue;
            }
        };
        log::info!(
            "dataset {id}: {} rows, baseline width {}",
            ctx.labels().len(),
            ctx.baseline_width()
        );

        let (cells, failures) = ctx.run_cells(config, Protocol::FullData);
        full.cells.extend(cells);
        full.failures.extend(failures);
        if config.fold_safe {
            let (cells, failures) = ctx.run_cells(config, Protocol::FoldSafe);
            safe.cells.extend(cells);
            safe.failures.extend(failures);
        }
        if let Some(tsne) = &config.tsne {
            projections.extend(ctx.projections(tsne.perplexity, tsne.iterations, config.seed));
        }
        datasets.push(ctx.summary);
    }

    let mut protocols = vec![full];
    if config.fold_safe {
        protocols.push(safe);
    }
    Ok(AblationReport {
        config: config.clone(),
        datasets,
        protocols,
        projections,
        manifest: RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            template_version: TEMPLATE_VERSION.to_string(),
            config_hash: config.config_hash(),
            seed: config.seed,
            fold_safe: config.fold_safe,
            started_unix,
        },
    })
}

/// Everything computed once per dataset before the cells fan out.
struct DatasetContext {
    id: String,
    prepared: PreparedDataset,
    embeddings: Vec<EmbeddingMatrix>,
    /// Full-data PCA output per backend.
    reduced: Vec<Matrix>,
    selected: Vec<SelectedEmbedding>,
    folds: FoldSplit,
    subsets: Vec<SubsetMatrix>,
    summary: DatasetSummary,
}

/// PCA (fitted on `fit_rows`) and forest selection for one backend. Returns the
/// reduced matrix for all rows, the fitted variance ratios and the selection.
fn reduce_and_select(
    embedding: &Matrix,
    fit_rows: Option<&[usize]>,
    labels: &LabelVector,
    config: &AblationConfig,
    model_id: &str,
) -> Result<(Matrix, Vec<f64>, SelectedEmbedding)> {
    let fit_x = match fit_rows {
        Some(rows) => embedding.select_rows(rows),
        None => embedding.clone(),
    };
    let fit_y = match fit_rows {
        Some(rows) => labels.select(rows),
        None => labels.clone(),
    };
    let max = max_components(fit_x.rows(), fit_x.cols());
    let d = config.pca_d.min(max);
    if d < config.pca_d {
        log::warn!("{model_id}: pca_d {} clamped to {d}", config.pca_d);
    }
    let pca = pca_fit(&fit_x, d, config.seed)?;
    let total = reduction::total_variance(&fit_x);
    let ratio = if total > 0.0 {
        pca.explained_variance_ratio(total)
    } else {
        vec![0.0; d]
    };
    let reduced = pca_transform(&pca, embedding)?;
    let fit_reduced = match fit_rows {
        Some(rows) => reduced.select_rows(rows),
        None => reduced.clone(),
    };
    let ranking = select_top_features(&fit_reduced, &fit_y, config.top_m, config.seed)?;
    let values = reduced.select_cols(&ranking.selected_indices);
    let names = ranking
        .selected_indices
        .iter()
        .map(|j| format!("{model_id}_pc{}", j + 1))
        .collect();
    Ok((
        reduced,
        ratio,
        SelectedEmbedding {
            model_id: model_id.to_string(),
            names,
            values,
            ranking,
        },
    ))
}

fn mean_record(records: &[MetricsRecord]) -> MetricsRecord {
    let k = records.len() as f64;
    let mean = |m: Metric| records.iter().map(|r| r.get(m)).sum::<f64>() / k;
    MetricsRecord {
        accuracy: mean(Metric::Accuracy),
        balanced_accuracy: mean(Metric::BalancedAccuracy),
        weighted_f1: mean(Metric::WeightedF1),
        roc_auc: mean(Metric::RocAuc),
    }
}

impl DatasetContext {
    fn build(
        config: &AblationConfig,
        ds_config: &crate::data::DatasetConfig,
        backends: &[&dyn EmbeddingBackend],
        cache: &EmbeddingCache,
    ) -> Result<Self> {
        let id = ds_config.dataset_id();
        let prepared = prepare(ds_config)?;
        let corpus = build_corpus(&prepared.dataset);
        let mut embeddings = Vec::with_capacity(backends.len());
        for backend in backends {
            log::info!(
                "dataset {id}: embedding with {}",
                backend.descriptor().model_id
            );
            embeddings.push(embed_corpus(*backend, &corpus, cache)?);
        }
        let labels = &prepared.labels;
        let reductions: Vec<_> = embeddings
            .par_iter()
            .map(|e| reduce_and_select(&e.values, None, labels, config, &e.backend.model_id))
            .collect::<Result<Vec<_>>>()?;
        let mut reduced = Vec::new();
        let mut selected = Vec::new();
        let mut backend_summaries = Vec::new();
        for (e, (z, ratio, sel)) in embeddings.iter().zip(reductions) {
            backend_summaries.push(BackendSummary {
                model_id: e.backend.model_id.clone(),
                corpus_fingerprint: e.corpus_fingerprint.clone(),
                embedding_dim: e.values.cols(),
                pca_d: z.cols(),
                explained_variance_ratio: ratio,
                selected_names: sel.names.clone(),
            });
            reduced.push(z);
            selected.push(sel);
        }
        let folds = stratified_kfold(&labels.values, config.folds, config.seed)?;
        let subsets = FeatureSubsetId::available(backends.len())
            .into_iter()
            .map(|s| assemble_subset(&prepared.baseline, &selected, s))
            .collect::<Result<Vec<_>>>()?;
        let summary = DatasetSummary {
            id: id.clone(),
            rows: labels.len(),
            baseline_width: prepared.baseline.values.cols(),
            class_names: labels.class_names.clone(),
            labels: labels.values.clone(),
            backends: backend_summaries,
            subset_widths: subsets.iter().map(|s| (s.id, s.values.cols())).collect(),
        };
        Ok(Self {
            id,
            prepared,
            embeddings,
            reduced,
            selected,
            folds,
            subsets,
            summary,
        })
    }

    fn labels(&self) -> &LabelVector {
        &self.prepared.labels
    }

    fn baseline_width(&self) -> usize {
        self.prepared.baseline.values.cols()
    }

    /// Per-fold selections fitted on training rows only.
    fn fold_safe_selections(&self, config: &AblationConfig) -> Result<Vec<Vec<SelectedEmbedding>>> {
        (0..self.folds.k())
            .into_par_iter()
            .map(|f| {
                let train = self.folds.training(f);
                self.embeddings
                    .iter()
                    .map(|e| {
                        reduce_and_select(
                            &e.values,
                            Some(&train),
                            self.labels(),
                            config,
                            &e.backend.model_id,
                        )
                        .map(|(_, _, sel)| sel)
                    })
                    .collect()
            })
            .collect()
    }

    fn run_cells(
        &self,
        config: &AblationConfig,
        protocol: Protocol,
    ) -> (Vec<CellResult>, Vec<CellFailure>) {
        let per_fold = match protocol {
            Protocol::FullData => None,
            Protocol::FoldSafe => match self.fold_safe_selections(config) {
                Ok(s) => Some(s),
                Err(e) => {
                    log::error!("dataset {}: fold-safe selection failed: {e}", self.id);
                    let failure = CellFailure {
                        dataset: self.id.clone(),
                        classifier: None,
                        subset: None,
                        error: e.to_string(),
                    };
                    return (Vec::new(), vec![failure]);
                }
            },
        };
        let jobs: Vec<(&ClassifierConfig, &SubsetMatrix)> = config
            .classifiers
            .iter()
            .flat_map(|c| self.subsets.iter().map(move |s| (c, s)))
            .collect();
        let outcomes: Vec<Result<CellResult>> = jobs
            .par_iter()
            .map(|(clf, subset)| {
                let effective = ClassifierConfig {
                    seed: config.seed.wrapping_add(clf.seed),
                    ..(*clf).clone()
                };
                let fold_features = |f: usize| -> Result<std::borrow::Cow<'_, SubsetMatrix>> {
                    match &per_fold {
                        None => Ok(std::borrow::Cow::Borrowed(*subset)),
                        Some(sel) => assemble_subset(&self.prepared.baseline, &sel[f], subset.id)
                            .map(std::borrow::Cow::Owned),
                    }
                };
                self.evaluate_cell(&clf.id(), &effective, subset, fold_features)
            })
            .collect();

        let mut cells = Vec::new();
        let mut failures = Vec::new();
        for ((clf, subset), outcome) in jobs.iter().zip(outcomes) {
            match outcome {
                Ok(cell) => cells.push(cell),
                Err(e) => {
                    log::error!("cell {}/{}/{} failed: {e}", self.id, clf.id(), subset.id);
                    failures.push(CellFailure {
                        dataset: self.id.clone(),
                        classifier: Some(clf.id()),
                        subset: Some(subset.id),
                        error: e.to_string(),
                    });
                }
            }
        }
        (cells, failures)
    }

    fn evaluate_cell<'a, F>(
        &self,
        classifier_id: &str,
        clf: &ClassifierConfig,
        full: &SubsetMatrix,
        fold_features: F,
    ) -> Result<CellResult>
    where
        F: Fn(usize) -> Result<std::borrow::Cow<'a, SubsetMatrix>>,
    {
        let labels = self.labels();
        let n_classes = labels.n_classes();
        let mut oof = Matrix::zeros(labels.len(), n_classes);
        let mut fold_metrics = Vec::with_capacity(self.folds.k());
        let mut fold_importance = Vec::with_capacity(self.folds.k());
        for f in 0..self.folds.k() {
            let features = fold_features(f)?;
            let train = self.folds.training(f);
            let val = self.folds.validation(f);
            let x_train = features.values.select_rows(&train);
            let y_train = labels.select(&train).values;
            let data = TrainingData::new(&x_train, &y_train, n_classes, &features.names)
                .with_groups(&features.categorical_groups);
            let model = classifiers::fit(&data, clf)?;
            let proba = classifiers::predict_proba(&model, &features.values.select_rows(val))?;
            let pred: Vec<usize> = proba.iter_rows().map(argmax).collect();
            let y_val = labels.select(val).values;
            fold_metrics.push(compute_metrics(&y_val, &pred, &proba)?);
            for (r, &row) in val.iter().enumerate() {
                oof.row_mut(row).copy_from_slice(proba.row(r));
            }
            fold_importance.push(
                model
                    .feature_names
                    .iter()
                    .cloned()
                    .zip(model.importance.iter().copied())
                    .collect(),
            );
        }
        let data = TrainingData::new(&full.values, &labels.values, n_classes, &full.names)
            .with_groups(&full.categorical_groups);
        let model = classifiers::fit(&data, clf)?;
        Ok(CellResult {
            dataset: self.id.clone(),
            classifier: classifier_id.to_string(),
            subset: full.id,
            width: full.values.cols(),
            mean: mean_record(&fold_metrics),
            fold_metrics,
            top_features: top_features_report(&model, TOP_FEATURES),
            fold_importance,
            oof_scores: oof,
        })
    }

    fn projections(&self, perplexity: f64, iterations: usize, seed: u64) -> Vec<Projection> {
        self.reduced
            .par_iter()
            .zip(&self.selected)
            .filter_map(|(z, sel)| {
                let params = TsneParams {
                    perplexity,
                    iterations,
                    seed,
                    ..TsneParams::default()
                };
                match reduction::tsne_run(z, &params) {
                    Ok(r) => Some(Projection {
                        dataset: self.id.clone(),
                        model_id: sel.model_id.clone(),
                        points: r.embedding,
                    }),
                    Err(e) => {
                        log::warn!(
                            "dataset {}: t-SNE for {} skipped: {e}",
                            self.id,
                            sel.model_id
                        );
                        None
                    }
                }
            })
            .collect()
    }
}
