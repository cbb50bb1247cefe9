//! Random forest: bootstrap-bagged Gini trees with √q candidate features per split.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::tree::{GiniTreeBuilder, TreeNode};
use super::{
    normalize, ClassWeight, ClassifierConfig, ClassifierError, ClassifierKind, ClassifierModel,
    FeatureSubsample, Result, TrainingData,
};
use crate::matrix::Matrix;

/// `n / (C × count(class))` for every sample, where `C` counts the classes present.
pub fn balanced_class_weights(y: &[usize], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for &c in y {
        counts[c] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    let n = y.len() as f64;
    y.iter()
        .map(|&c| n / (present * counts[c] as f64))
        .collect()
}

fn tree_seed(seed: u64, tree_index: usize) -> u64 {
    seed.wrapping_add(tree_index as u64)
}

pub fn rf_fit(data: &TrainingData, config: &ClassifierConfig) -> Result<ClassifierModel> {
    if config.kind != ClassifierKind::RandomForest {
        return Err(ClassifierError::InvalidConfig(
            "rf_fit needs kind random_forest".into(),
        ));
    }
    config.validate()?;
    data.check()?;
    let (x, y) = (data.x, data.y);
    let n = y.len();
    let q = x.cols();
    let weight = match config.class_weight {
        ClassWeight::Balanced => balanced_class_weights(y, data.n_classes),
        ClassWeight::None => vec![1.0; n],
    };
    let max_features = match config.subsample_features {
        FeatureSubsample::Sqrt => ((q as f64).sqrt().floor() as usize).max(1),
        FeatureSubsample::All => q.max(1),
    };

    // Each tree owns its RNG (seed + index), so parallel fitting is reproducible.
    let fitted: Vec<(TreeNode, Vec<f64>)> = (0..config.trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(config.seed, t));
            let mut sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut builder = GiniTreeBuilder {
                x,
                y,
                weight: &weight,
                n_classes: data.n_classes,
                max_features,
                max_depth: config.max_depth,
                min_samples_split: config.min_samples_split,
                importance: vec![0.0; q],
            };
            let tree = builder.build(&mut sample, 0, &mut rng);
            let mut imp = builder.importance;
            normalize(&mut imp);
            (tree, imp)
        })
        .collect();

    let mut importance = vec![0.0; q];
    let mut trees = Vec::with_capacity(fitted.len());
    for (tree, imp) in fitted {
        for (acc, v) in importance.iter_mut().zip(&imp) {
            *acc += v;
        }
        trees.push(vec![tree]);
    }
    normalize(&mut importance);

    Ok(ClassifierModel {
        config: config.clone(),
        n_classes: data.n_classes,
        input_width: q,
        feature_names: data.feature_names.to_vec(),
        base_score: Vec::new(),
        trees,
        importance,
        encoder: None,
        training_log_loss: Vec::new(),
    })
}

/// Mean of per-tree leaf class frequencies.
pub(super) fn predict(model: &ClassifierModel, x: &Matrix) -> Matrix {
    let c = model.n_classes;
    let mut out = Matrix::zeros(x.rows(), c);
    let scale = 1.0 / model.trees.len() as f64;
    for r in 0..x.rows() {
        let row = x.row(r);
        let acc = out.row_mut(r);
        for tree in model.trees.iter().flatten() {
            for (a, v) in acc.iter_mut().zip(tree.leaf_value(row)) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a *= scale);
        let total: f64 = acc.iter().sum();
        acc.iter_mut().for_each(|a| *a /= total);
    }
    out
}
