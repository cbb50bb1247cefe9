//! Newton gradient boosting on log-loss (sigmoid) and multiclass log-loss (softmax).
//!
//! Per round and per class: `g = p − y`, `h = p(1 − p)`; leaf value
//! `−η·G/(H + λ)`; split gain `½[G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)]`,
//! accepted only when both children keep `H ≥ min_child_weight`.

use rayon::prelude::*;

use super::ordered_ts::OrderedTsEncoder;
use super::tree::{NewtonTreeBuilder, TreeNode};
use super::{
    balanced_class_weights, normalize, ClassWeight, ClassifierConfig, ClassifierError,
    ClassifierKind, ClassifierModel, Result, TrainingData,
};
use crate::matrix::Matrix;

/// Keeps probabilities away from exact 0/1 in the loss and the Hessian.
const PROB_EPS: f64 = 1e-15;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    v.iter_mut().for_each(|x| *x /= total);
}

/// Raw scores → probabilities: sigmoid for one output column, softmax otherwise.
fn scores_to_proba(scores: &Matrix, n_classes: usize) -> Matrix {
    let mut out = Matrix::zeros(scores.rows(), n_classes);
    for r in 0..scores.rows() {
        if scores.cols() == 1 {
            let p = sigmoid(scores.get(r, 0));
            out.set(r, 0, 1.0 - p);
            out.set(r, 1, p);
        } else {
            let row = out.row_mut(r);
            row.copy_from_slice(scores.row(r));
            softmax_in_place(row);
        }
    }
    out
}

/// Mean negative log-likelihood of `y` under `proba`.
pub fn log_loss(proba: &Matrix, y: &[usize]) -> f64 {
    let total: f64 = y
        .iter()
        .enumerate()
        .map(|(i, &c)| -proba.get(i, c).clamp(PROB_EPS, 1.0).ln())
        .sum();
    total / y.len() as f64
}

fn base_scores(y: &[usize], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0.0f64; n_classes];
    for &c in y {
        counts[c] += 1.0;
    }
    if n_classes == 2 {
        vec![(counts[1] / counts[0]).ln()]
    } else {
        let n = y.len() as f64;
        // absent classes get a tiny prior instead of −∞
        counts.iter().map(|&c| (c.max(1e-6) / n).ln()).collect()
    }
}

pub fn gbt_fit(data: &TrainingData, config: &ClassifierConfig) -> Result<ClassifierModel> {
    if config.kind == ClassifierKind::RandomForest {
        return Err(ClassifierError::InvalidConfig(
            "gbt_fit needs kind gbt or gbt_ordered_ts".into(),
        ));
    }
    config.validate()?;
    data.check()?;

    let (encoder, encoded, names) =
        if config.kind == ClassifierKind::GbtOrderedTs && !data.categorical_groups.is_empty() {
            let (enc, m, names) = OrderedTsEncoder::fit_transform(
                data.x,
                data.feature_names,
                data.categorical_groups,
                data.y,
                data.n_classes,
                config.ts_prior_weight,
                config.seed,
            );
            (Some(enc), Some(m), names)
        } else {
            (None, None, data.feature_names.to_vec())
        };
    let x = encoded.as_ref().unwrap_or(data.x);
    let y = data.y;
    let n = y.len();
    let n_classes = data.n_classes;
    let outputs = if n_classes == 2 { 1 } else { n_classes };
    let sample_weight = match config.class_weight {
        ClassWeight::Balanced => balanced_class_weights(y, n_classes),
        ClassWeight::None => vec![1.0; n],
    };

    let base_score = base_scores(y, n_classes);
    let mut scores = Matrix::zeros(n, outputs);
    for r in 0..n {
        scores.row_mut(r).copy_from_slice(&base_score);
    }
    let max_depth = config.max_depth.expect("validated");
    let mut gain = vec![0.0; x.cols()];
    let mut trees = Vec::with_capacity(config.trees);
    let mut proba = scores_to_proba(&scores, n_classes);
    let mut losses = vec![log_loss(&proba, y)];

    for _ in 0..config.trees {
        let round: Vec<(TreeNode, Vec<f64>)> = (0..outputs)
            .into_par_iter()
            .map(|k| {
                // the binary model's single output is the class-1 score
                let class = if outputs == 1 { 1 } else { k };
                let mut grad = Vec::with_capacity(n);
                let mut hess = Vec::with_capacity(n);
                for i in 0..n {
                    let p = proba.get(i, class);
                    let target = f64::from(u8::from(y[i] == class));
                    grad.push((p - target) * sample_weight[i]);
                    hess.push((p * (1.0 - p)).max(PROB_EPS) * sample_weight[i]);
                }
                let mut builder = NewtonTreeBuilder {
                    x,
                    grad: &grad,
                    hess: &hess,
                    max_depth,
                    min_child_weight: config.min_child_weight,
                    lambda: config.lambda_l2,
                    shrinkage: config.learning_rate,
                    gain: vec![0.0; x.cols()],
                };
                let mut idx: Vec<usize> = (0..n).collect();
                let tree = builder.build(&mut idx, 0);
                (tree, builder.gain)
            })
            .collect();
        let mut round_trees = Vec::with_capacity(outputs);
        for (k, (tree, g)) in round.into_iter().enumerate() {
            for r in 0..n {
                let delta = tree.leaf_value(x.row(r))[0];
                scores.set(r, k, scores.get(r, k) + delta);
            }
            for (acc, v) in gain.iter_mut().zip(&g) {
                *acc += v;
            }
            round_trees.push(tree);
        }
        trees.push(round_trees);
        proba = scores_to_proba(&scores, n_classes);
        losses.push(log_loss(&proba, y));
    }
    normalize(&mut gain);

    Ok(ClassifierModel {
        config: config.clone(),
        n_classes,
        input_width: data.x.cols(),
        feature_names: names,
        base_score,
        trees,
        importance: gain,
        encoder,
        training_log_loss: losses,
    })
}

pub(super) fn predict(model: &ClassifierModel, x: &Matrix) -> Matrix {
    let encoded = model.encoder.as_ref().map(|e| e.transform(x));
    let x = encoded.as_ref().unwrap_or(x);
    let outputs = model.base_score.len();
    let mut scores = Matrix::zeros(x.rows(), outputs);
    for r in 0..x.rows() {
        let row = x.row(r);
        let s = scores.row_mut(r);
        s.copy_from_slice(&model.base_score);
        for round in &model.trees {
            for (k, tree) in round.iter().enumerate() {
                s[k] += tree.leaf_value(row)[0];
            }
        }
    }
    scores_to_proba(&scores, model.n_classes)
}
