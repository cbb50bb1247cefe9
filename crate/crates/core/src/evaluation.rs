//! Stratified k-fold splitting, classification metrics, ROC curves, paired
//! t-tests and Bonferroni decisions.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("ROC curve needs both classes present")]
    DegenerateLabels,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, EvaluationError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    /// Validation indices per fold, each sorted ascending.
    pub folds: Vec<Vec<usize>>,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn validation(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    /// Every index not in `fold`, ascending.
    pub fn training(&self, fold: usize) -> Vec<usize> {
        let mut train: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(f, _)| *f != fold)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        train.sort_unstable();
        train
    }
}

/// Shuffles each class (in class-index order, one seeded stream) and deals its
/// members to folds round-robin, continuing from the fold where the previous
/// class stopped.
pub fn stratified_kfold(y: &[usize], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(EvaluationError::InvalidArgument(format!(
            "k must be at least 2, got {k}"
        )));
    }
    if y.len() < k {
        return Err(EvaluationError::TooFewSamples {
            needed: k,
            got: y.len(),
        });
    }
    let n_classes = y.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in y.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            log::warn!(
                "class {c} has {} members, fewer than {k} folds",
                members.len()
            );
        }
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(FoldSplit { folds })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    BalancedAccuracy,
    WeightedF1,
    RocAuc,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Accuracy,
        Metric::BalancedAccuracy,
        Metric::WeightedF1,
        Metric::RocAuc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::BalancedAccuracy => "balanced_accuracy",
            Metric::WeightedF1 => "weighted_f1",
            Metric::RocAuc => "roc_auc",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub weighted_f1: f64,
    pub roc_auc: f64,
}

impl MetricsRecord {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Accuracy => self.accuracy,
            Metric::BalancedAccuracy => self.balanced_accuracy,
            Metric::WeightedF1 => self.weighted_f1,
            Metric::RocAuc => self.roc_auc,
        }
    }
}

/// Mann–Whitney AUC (ties count ½) of `scores` for `positive` against the rest;
/// `None` unless both groups are non-empty.
pub fn auc(positive: &[bool], scores: &[f64]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of (1-based, tie-averaged) ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        let pos_in_group = order[i..=j].iter().filter(|&&o| positive[o]).count();
        rank_sum += avg_rank * pos_in_group as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Accuracy, balanced accuracy, weighted F1 and (macro one-vs-rest) ROC-AUC.
/// `scores` is `n × C`; its width fixes the number of classes.
pub fn compute_metrics(
    y_true: &[usize],
    y_pred: &[usize],
    scores: &Matrix,
) -> Result<MetricsRecord> {
    let n = y_true.len();
    if y_pred.len() != n {
        return Err(EvaluationError::LengthMismatch(n, y_pred.len()));
    }
    if scores.rows() != n {
        return Err(EvaluationError::LengthMismatch(n, scores.rows()));
    }
    if n == 0 {
        return Err(EvaluationError::TooFewSamples { needed: 1, got: 0 });
    }
    let c = scores.cols();
    if let Some(&bad) = y_true.iter().chain(y_pred).find(|&&v| v >= c) {
        return Err(EvaluationError::InvalidArgument(format!(
            "label {bad} outside {c} score columns"
        )));
    }
    for (r, row) in scores.iter_rows().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(EvaluationError::InvalidArgument(format!(
                "score row {r} sums to {s}"
            )));
        }
    }

    let mut tp = vec![0usize; c];
    let mut support = vec![0usize; c];
    let mut predicted = vec![0usize; c];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        support[t] += 1;
        predicted[p] += 1;
        if t == p {
            tp[t] += 1;
        }
    }
    let accuracy = tp.iter().sum::<usize>() as f64 / n as f64;

    let present: Vec<usize> = (0..c).filter(|&k| support[k] > 0).collect();
    let balanced_accuracy = present
        .iter()
        .map(|&k| tp[k] as f64 / support[k] as f64)
        .sum::<f64>()
        / present.len() as f64;

    let mut weighted_f1 = 0.0;
    for k in 0..c {
        if support[k] == 0 {
            continue;
        }
        if predicted[k] == 0 {
            log::debug!("class {k} never predicted; its F1 is 0");
            continue;
        }
        let precision = tp[k] as f64 / predicted[k] as f64;
        let recall = tp[k] as f64 / support[k] as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        weighted_f1 += support[k] as f64 / n as f64 * f1;
    }

    let roc_auc = if c == 2 {
        let pos: Vec<bool> = y_true.iter().map(|&t| t == 1).collect();
        auc(&pos, &scores.column(1))
    } else {
        let per_class: Vec<f64> = (0..c)
            .filter_map(|k| {
                let pos: Vec<bool> = y_true.iter().map(|&t| t == k).collect();
                auc(&pos, &scores.column(k))
            })
            .collect();
        (!per_class.is_empty()).then(|| per_class.iter().sum::<f64>() / per_class.len() as f64)
    };
    let roc_auc = roc_auc.unwrap_or_else(|| {
        log::warn!("ROC-AUC undefined with a single class in y_true; reporting 0.5");
        0.5
    });

    Ok(MetricsRecord {
        accuracy,
        balanced_accuracy,
        weighted_f1,
        roc_auc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive; the first point uses `+∞`.
    pub threshold: f64,
}

/// One point per distinct score, thresholds descending, from (0,0) to (1,1).
pub fn roc_curve(positive: &[bool], scores: &[f64]) -> Result<Vec<RocPoint>> {
    if positive.len() != scores.len() {
        return Err(EvaluationError::LengthMismatch(
            positive.len(),
            scores.len(),
        ));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvaluationError::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold: s,
        });
    }
    Ok(points)
}

pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub p_value: f64,
    pub df: usize,
}

/// CDF of Student's t with `df` degrees of freedom, via the regularized
/// incomplete beta function: `P(|T| > |t|) = I_{df/(df+t²)}(df/2, 1/2)`.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let x = df / (df + t * t);
    let tail = 0.5 * statrs::function::beta::beta_reg(df / 2.0, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided paired t-test on `a − b` with the sample standard deviation.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(EvaluationError::LengthMismatch(a.len(), b.len()));
    }
    let k = a.len();
    if k < 2 {
        return Err(EvaluationError::TooFewSamples { needed: 2, got: k });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let kf = k as f64;
    let mean = d.iter().sum::<f64>() / kf;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (kf - 1.0);
    let df = k - 1;
    let sd = var.sqrt();
    let (t, p) = if sd == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            // identical nonzero differences: infinitely strong evidence
            (mean.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = mean / (sd / kf.sqrt());
        let p = 2.0 * student_t_cdf(-t.abs(), df as f64);
        (t, p.clamp(0.0, 1.0))
    };
    Ok(TTestResult {
        t_statistic: t,
        p_value: p,
        df,
    })
}

/// `p_i < alpha / M`.
pub fn bonferroni_decisions(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let threshold = alpha / p_values.len().max(1) as f64;
    p_values.iter().map(|&p| p < threshold).collect()
}
