//! Ordered target statistics for categorical columns.
//!
//! Row `i` is encoded from the targets of rows that precede it in a random
//! permutation only, plus a prior `a·ȳ`:
//! `(Σ_{π(j)<π(i), cat_j=cat_i} y_j + a·ȳ) / (#{π(j)<π(i), cat_j=cat_i} + a)`.
//! Unseen rows (prediction time) use the statistics of the whole training set.

use std::collections::HashMap;
use std::hash::Hash;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::CategoricalGroup;
use crate::matrix::Matrix;

pub fn seeded_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Encodes `column` visiting rows in `order` (a permutation of `0..n`; `order[k]`
/// is the row at position `k`).
pub fn ordered_target_encode_with_order<T: Eq + Hash>(
    column: &[T],
    y: &[f64],
    prior_weight: f64,
    order: &[usize],
) -> Vec<f64> {
    let prior = if y.is_empty() {
        0.0
    } else {
        y.iter().sum::<f64>() / y.len() as f64
    };
    ordered_target_encode_with_prior(column, y, prior_weight, order, prior)
}

/// Same as [`ordered_target_encode_with_order`] with an explicit prior mean.
/// Row `i` then depends only on `prior` and the targets of rows before it in `order`.
pub fn ordered_target_encode_with_prior<T: Eq + Hash>(
    column: &[T],
    y: &[f64],
    prior_weight: f64,
    order: &[usize],
    prior: f64,
) -> Vec<f64> {
    assert_eq!(column.len(), y.len());
    assert_eq!(order.len(), y.len());
    let mut stats: HashMap<&T, (f64, f64)> = HashMap::new();
    let mut out = vec![0.0; y.len()];
    for &i in order {
        let (sum, count) = stats.entry(&column[i]).or_insert((0.0, 0.0));
        out[i] = (*sum + prior_weight * prior) / (*count + prior_weight);
        *sum += y[i];
        *count += 1.0;
    }
    out
}

/// Encodes `column` with a permutation drawn from `seed`.
pub fn ordered_target_encode<T: Eq + Hash>(
    column: &[T],
    y: &[f64],
    prior_weight: f64,
    seed: u64,
) -> Vec<f64> {
    ordered_target_encode_with_order(column, y, prior_weight, &seeded_order(y.len(), seed))
}

/// Fitted encoder for one categorical column and one target (binary label or one
/// class of a one-vs-rest split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LevelStats {
    prior: f64,
    /// Per level index: (target sum, count) over the full training set.
    sums: Vec<f64>,
    counts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GroupEncoder {
    group: CategoricalGroup,
    per_target: Vec<LevelStats>,
}

/// Replaces every one-hot block with ordered-target-statistic columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderedTsEncoder {
    groups: Vec<GroupEncoder>,
    prior_weight: f64,
    input_width: usize,
    /// Source of each output column.
    layout: Vec<OutputColumn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum OutputColumn {
    Passthrough(usize),
    Encoded { group: usize, target: usize },
}

/// Level index of `row` within a one-hot block; `None` when no indicator is set.
fn level_of(row: &[f64], group: &CategoricalGroup) -> Option<usize> {
    (0..group.width()).find(|&k| row[group.start + k] > 0.5)
}

/// Targets are the binary label, or one indicator per class when `n_classes > 2`.
fn target_columns(y: &[usize], n_classes: usize) -> Vec<Vec<f64>> {
    if n_classes <= 2 {
        vec![y.iter().map(|&v| v as f64).collect()]
    } else {
        (0..n_classes)
            .map(|c| y.iter().map(|&v| f64::from(u8::from(v == c))).collect())
            .collect()
    }
}

impl OrderedTsEncoder {
    /// Fits on training rows and returns the encoder plus the ordered (leak-free)
    /// training matrix and its column names.
    pub fn fit_transform(
        x: &Matrix,
        names: &[String],
        groups: &[CategoricalGroup],
        y: &[usize],
        n_classes: usize,
        prior_weight: f64,
        seed: u64,
    ) -> (Self, Matrix, Vec<String>) {
        let targets = target_columns(y, n_classes);
        let class_suffix = n_classes > 2;
        let order = seeded_order(x.rows(), seed);

        let mut group_start: HashMap<usize, usize> = HashMap::new();
        let mut in_group = vec![false; x.cols()];
        for (g, group) in groups.iter().enumerate() {
            group_start.insert(group.start, g);
            for k in 0..group.width() {
                in_group[group.start + k] = true;
            }
        }

        let mut layout = Vec::new();
        let mut out_names = Vec::new();
        for c in 0..x.cols() {
            if let Some(&g) = group_start.get(&c) {
                for t in 0..targets.len() {
                    layout.push(OutputColumn::Encoded {
                        group: g,
                        target: t,
                    });
                    out_names.push(if class_suffix {
                        format!("{}_ts[{t}]", groups[g].column)
                    } else {
                        format!("{}_ts", groups[g].column)
                    });
                }
            } else if !in_group[c] {
                layout.push(OutputColumn::Passthrough(c));
                out_names.push(names[c].clone());
            }
        }

        let mut encoders = Vec::with_capacity(groups.len());
        let mut encoded: Vec<Vec<Vec<f64>>> = Vec::with_capacity(groups.len());
        for group in groups {
            let levels: Vec<Option<usize>> = x.iter_rows().map(|r| level_of(r, group)).collect();
            let mut per_target = Vec::new();
            let mut cols = Vec::new();
            for t in &targets {
                let prior = t.iter().sum::<f64>() / t.len().max(1) as f64;
                let mut sums = vec![0.0; group.width()];
                let mut counts = vec![0.0; group.width()];
                for (lvl, v) in levels.iter().zip(t) {
                    if let Some(l) = lvl {
                        sums[*l] += v;
                        counts[*l] += 1.0;
                    }
                }
                per_target.push(LevelStats {
                    prior,
                    sums,
                    counts,
                });
                cols.push(ordered_target_encode_with_order(
                    &levels,
                    t,
                    prior_weight,
                    &order,
                ));
            }
            encoders.push(GroupEncoder {
                group: group.clone(),
                per_target,
            });
            encoded.push(cols);
        }

        let mut out = Matrix::zeros(x.rows(), layout.len());
        for (j, col) in layout.iter().enumerate() {
            match *col {
                OutputColumn::Passthrough(c) => {
                    for r in 0..x.rows() {
                        out.set(r, j, x.get(r, c));
                    }
                }
                OutputColumn::Encoded { group, target } => {
                    for (r, &v) in encoded[group][target].iter().enumerate() {
                        out.set(r, j, v);
                    }
                }
            }
        }
        let encoder = Self {
            groups: encoders,
            prior_weight,
            input_width: x.cols(),
            layout,
        };
        (encoder, out, out_names)
    }

    /// Encodes unseen rows with full-training-set statistics.
    pub fn transform(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.layout.len());
        for r in 0..x.rows() {
            let row = x.row(r);
            for (j, col) in self.layout.iter().enumerate() {
                let v = match *col {
                    OutputColumn::Passthrough(c) => row[c],
                    OutputColumn::Encoded { group, target } => {
                        let enc = &self.groups[group];
                        let stats = &enc.per_target[target];
                        let a = self.prior_weight;
                        match level_of(row, &enc.group) {
                            Some(l) => (stats.sums[l] + a * stats.prior) / (stats.counts[l] + a),
                            None => stats.prior,
                        }
                    }
                };
                out.set(r, j, v);
            }
        }
        out
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }
}
