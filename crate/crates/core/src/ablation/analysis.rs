use serde::{Deserialize, Serialize};

use super::{AblationError, AblationReport, FeatureSubsetId, Protocol, ProtocolReport, Result};
use crate::classifiers::{ranked_features, ClassifierModel};
use crate::evaluation::{bonferroni_decisions, paired_t_test, Metric};

/// Top-`k` features of a fitted model by importance (descending, ties by index).
pub fn top_features_report(model: &ClassifierModel, k: usize) -> Vec<(String, f64)> {
    ranked_features(&model.importance)
        .into_iter()
        .take(k)
        .map(|i| (model.feature_names[i].clone(), model.importance[i]))
        .collect()
}

/// Pairwise paired t-tests between subsets for one (dataset, classifier, metric)
/// family, with Bonferroni decisions over the family's `S(S−1)/2` comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceMatrix {
    pub dataset: String,
    pub classifier: String,
    pub metric: Metric,
    pub subsets: Vec<FeatureSubsetId>,
    /// Symmetric, false on the diagonal.
    pub significant: Vec<Vec<bool>>,
    pub t_statistic: Vec<Vec<f64>>,
    pub p_value: Vec<Vec<f64>>,
    pub df: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestRow {
    pub dataset: String,
    pub classifier: String,
    pub metric: Metric,
    pub subset_a: FeatureSubsetId,
    pub subset_b: FeatureSubsetId,
    pub t: f64,
    pub df: usize,
    pub p: f64,
    pub significant: bool,
}

impl SignificanceMatrix {
    /// One row per unordered pair `(i < j)` in canonical subset order.
    pub fn rows(&self) -> Vec<TTestRow> {
        let s = self.subsets.len();
        let mut out = Vec::with_capacity(s * s.saturating_sub(1) / 2);
        for i in 0..s {
            for j in (i + 1)..s {
                out.push(TTestRow {
                    dataset: self.dataset.clone(),
                    classifier: self.classifier.clone(),
                    metric: self.metric,
                    subset_a: self.subsets[i],
                    subset_b: self.subsets[j],
                    t: self.t_statistic[i][j],
                    df: self.df,
                    p: self.p_value[i][j],
                    significant: self.significant[i][j],
                });
            }
        }
        out
    }

    pub fn get(&self, a: FeatureSubsetId, b: FeatureSubsetId) -> Option<bool> {
        let i = self.subsets.iter().position(|&s| s == a)?;
        let j = self.subsets.iter().position(|&s| s == b)?;
        Some(self.significant[i][j])
    }
}

pub fn significance_matrix(
    protocol: &ProtocolReport,
    subsets: &[FeatureSubsetId],
    dataset: &str,
    classifier: &str,
    metric: Metric,
    alpha: f64,
) -> Result<SignificanceMatrix> {
    let mut folds = Vec::with_capacity(subsets.len());
    for &s in subsets {
        let cell = protocol.cell(dataset, classifier, s).ok_or_else(|| {
            AblationError::IncompleteReport(format!("missing cell {dataset}/{classifier}/{s}"))
        })?;
        folds.push(cell.fold_values(metric));
    }
    let s = subsets.len();
    let mut t = vec![vec![0.0; s]; s];
    let mut p = vec![vec![1.0; s]; s];
    let mut pairs = Vec::new();
    let mut p_list = Vec::new();
    let mut df = 0;
    for i in 0..s {
        for j in (i + 1)..s {
            let r = paired_t_test(&folds[i], &folds[j])?;
            t[i][j] = r.t_statistic;
            t[j][i] = -r.t_statistic;
            p[i][j] = r.p_value;
            p[j][i] = r.p_value;
            df = r.df;
            pairs.push((i, j));
            p_list.push(r.p_value);
        }
    }
    let mut significant = vec![vec![false; s]; s];
    for ((i, j), d) in pairs.into_iter().zip(bonferroni_decisions(&p_list, alpha)) {
        significant[i][j] = d;
        significant[j][i] = d;
    }
    Ok(SignificanceMatrix {
        dataset: dataset.to_string(),
        classifier: classifier.to_string(),
        metric,
        subsets: subsets.to_vec(),
        significant,
        t_statistic: t,
        p_value: p,
        df,
    })
}

/// Every complete (dataset, classifier, metric) family of one protocol, in
/// dataset, classifier, metric order. Incomplete families are skipped with a warning.
pub fn significance_matrices(
    report: &AblationReport,
    protocol: Protocol,
    alpha: f64,
) -> Vec<SignificanceMatrix> {
    let Some(results) = report.protocol(protocol) else {
        return Vec::new();
    };
    let subsets = report.subsets();
    let mut out = Vec::new();
    for dataset in report.dataset_ids() {
        for classifier in report.classifier_ids() {
            for metric in Metric::ALL {
                match significance_matrix(results, &subsets, &dataset, &classifier, metric, alpha) {
                    Ok(m) => out.push(m),
                    Err(e) => log::warn!("skipping significance family: {e}"),
                }
            }
        }
    }
    out
}

/// Flattened t-test table of [`significance_matrices`].
pub fn ttest_rows(report: &AblationReport, protocol: Protocol, alpha: f64) -> Vec<TTestRow> {
    significance_matrices(report, protocol, alpha)
        .iter()
        .flat_map(|m| m.rows())
        .collect()
}

/// Per classifier, how often each subset has the best mean over (dataset, metric)
/// pairs; each of the four metrics counts once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinCounts {
    pub classifiers: Vec<String>,
    pub subsets: Vec<FeatureSubsetId>,
    /// `tallies[c][s]`.
    pub tallies: Vec<Vec<usize>>,
    /// Human-readable notes for exact ties.
    pub ties: Vec<String>,
}

impl WinCounts {
    pub fn get(&self, classifier: &str, subset: FeatureSubsetId) -> Option<usize> {
        let c = self.classifiers.iter().position(|x| x == classifier)?;
        let s = self.subsets.iter().position(|&x| x == subset)?;
        Some(self.tallies[c][s])
    }
}

pub fn win_counts(report: &AblationReport, protocol: Protocol) -> WinCounts {
    let subsets = report.subsets();
    let classifiers = report.classifier_ids();
    let mut tallies = vec![vec![0usize; subsets.len()]; classifiers.len()];
    let mut ties = Vec::new();
    if let Some(results) = report.protocol(protocol) {
        for dataset in report.dataset_ids() {
            for (ci, classifier) in classifiers.iter().enumerate() {
                for metric in Metric::ALL {
                    let means: Vec<Option<f64>> = subsets
                        .iter()
                        .map(|&s| {
                            results
                                .cell(&dataset, classifier, s)
                                .map(|c| c.mean.get(metric))
                        })
                        .collect();
                    let mut best: Option<(usize, f64)> = None;
                    for (si, m) in means.iter().enumerate() {
                        if let Some(v) = *m {
                            if best.is_none_or(|(_, b)| v > b) {
                                best = Some((si, v));
                            }
                        }
                    }
                    let Some((winner, value)) = best else {
                        continue;
                    };
                    tallies[ci][winner] += 1;
                    let tied: Vec<&str> = means
                        .iter()
                        .enumerate()
                        .filter(|(si, m)| *si != winner && **m == Some(value))
                        .map(|(si, _)| subsets[si].as_str())
                        .collect();
                    if !tied.is_empty() {
                        let note = format!(
                            "{dataset}/{classifier}/{metric}: {} tied with {} at {value}; earliest wins",
                            subsets[winner],
                            tied.join(", ")
                        );
                        log::info!("{note}");
                        ties.push(note);
                    }
                }
            }
        }
    }
    WinCounts {
        classifiers,
        subsets,
        tallies,
        ties,
    }
}
