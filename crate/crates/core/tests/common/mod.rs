//! Independent oracles shared by the property and acceptance tests.
#![allow(dead_code)]

use embrich::Matrix;
use rand::Rng;

/// Brute-force confusion-matrix metrics plus pair-counting AUC:
/// `[accuracy, balanced_accuracy, weighted_f1, roc_auc]`.
pub fn metrics_oracle(y_true: &[usize], y_pred: &[usize], scores: &Matrix) -> [f64; 4] {
    let c = scores.cols();
    let n = y_true.len();
    let mut confusion = vec![vec![0usize; c]; c];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[t][p] += 1;
    }
    let diag: usize = (0..c).map(|k| confusion[k][k]).sum();
    let accuracy = diag as f64 / n as f64;

    let mut recalls = Vec::new();
    let mut weighted_f1 = 0.0;
    for (k, row) in confusion.iter().enumerate() {
        let support: usize = row.iter().sum();
        if support == 0 {
            continue;
        }
        let tp = row[k];
        let fp: usize = (0..c).filter(|&j| j != k).map(|j| confusion[j][k]).sum();
        let fn_ = support - tp;
        recalls.push(tp as f64 / support as f64);
        let denom = 2 * tp + fp + fn_;
        let f1 = if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
        weighted_f1 += f1 * support as f64 / n as f64;
    }
    let balanced = recalls.iter().sum::<f64>() / recalls.len() as f64;

    let auc = if c == 2 {
        let pos: Vec<bool> = y_true.iter().map(|&t| t == 1).collect();
        pair_count_auc(&pos, &scores.column(1))
    } else {
        let per: Vec<f64> = (0..c)
            .filter_map(|k| {
                let pos: Vec<bool> = y_true.iter().map(|&t| t == k).collect();
                pair_count_auc(&pos, &scores.column(k))
            })
            .collect();
        (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64)
    };
    [accuracy, balanced, weighted_f1, auc.unwrap_or(0.5)]
}

/// Fraction of (positive, negative) pairs ordered correctly, ties counted ½.
pub fn pair_count_auc(positive: &[bool], scores: &[f64]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (i, &pi) in positive.iter().enumerate() {
        if !pi {
            continue;
        }
        for (j, &pj) in positive.iter().enumerate() {
            if pj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// Random instance with `n ≤ 50`, `2 ≤ C ≤ 5` and coarse (often tied) score rows.
pub fn random_metric_instance<R: Rng>(rng: &mut R) -> (Vec<usize>, Vec<usize>, Matrix) {
    let c = rng.random_range(2..=5usize);
    let n = rng.random_range(1..=50usize);
    let y_true: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let y_pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let mut scores = Matrix::zeros(n, c);
    for r in 0..n {
        let mut w: Vec<f64> = (0..c).map(|_| rng.random_range(0..5u32) as f64).collect();
        if w.iter().all(|&v| v == 0.0) {
            w[rng.random_range(0..c)] = 1.0;
        }
        let s: f64 = w.iter().sum();
        for (k, v) in w.iter().enumerate() {
            scores.set(r, k, v / s);
        }
    }
    (y_true, y_pred, scores)
}

fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Student-t CDF by composite Simpson integration of the density from 0 to |t|.
pub fn t_cdf_quadrature(t: f64, df: f64) -> f64 {
    let log_norm = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    let density = |x: f64| (log_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
    let a = t.abs();
    if a == 0.0 {
        return 0.5;
    }
    let steps = 2 * ((a * 4000.0).ceil() as usize).max(50);
    let h = a / steps as f64;
    let mut sum = density(0.0) + density(a);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * density(i as f64 * h);
    }
    let half = sum * h / 3.0;
    if t > 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

/// Per-class fold counts all lie in `{⌊n_c/k⌋, ⌈n_c/k⌉}`.
pub fn folds_are_stratified(y: &[usize], folds: &[Vec<usize>]) -> bool {
    let k = folds.len();
    let n_classes = y.iter().max().map_or(0, |m| m + 1);
    (0..n_classes).all(|c| {
        let total = y.iter().filter(|&&v| v == c).count();
        let (lo, hi) = (total / k, total.div_ceil(k));
        folds.iter().all(|f| {
            let cnt = f.iter().filter(|&&i| y[i] == c).count();
            (lo..=hi).contains(&cnt)
        })
    })
}

/// Folds cover `0..n` exactly once.
pub fn folds_partition(n: usize, folds: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; n];
    for f in folds {
        for &i in f {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
    }
    seen.into_iter().all(|s| s)
}
