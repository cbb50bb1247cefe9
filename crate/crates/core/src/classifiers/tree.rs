//! Binary decision trees: Gini-impurity CART for forests and Newton
//! (gradient/Hessian) regression trees for boosting. Split candidates are the
//! midpoints between consecutive distinct sorted values of a feature.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    /// Class-probability vector (forest) or a single additive score (boosting).
    Leaf { value: Vec<f64> },
}

impl TreeNode {
    pub fn leaf_value(&self, row: &[f64]) -> &[f64] {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[*feature] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }
}

/// Threshold strictly below `hi` and at least `lo`, so `lo` goes left and `hi` right.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= hi || mid < lo {
        lo
    } else {
        mid
    }
}

fn partition(idx: &mut [usize], x: &Matrix, feature: usize, threshold: f64) -> usize {
    let mut split = 0;
    for i in 0..idx.len() {
        if x.get(idx[i], feature) <= threshold {
            idx.swap(i, split);
            split += 1;
        }
    }
    split
}

pub(crate) struct GiniTreeBuilder<'a> {
    pub x: &'a Matrix,
    pub y: &'a [usize],
    pub weight: &'a [f64],
    pub n_classes: usize,
    pub max_features: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Weighted impurity decrease accumulated per feature.
    pub importance: Vec<f64>,
}

struct GiniSplit {
    feature: usize,
    threshold: f64,
    score: f64,
    left_weight: f64,
    left_impurity: f64,
    right_weight: f64,
    right_impurity: f64,
}

fn gini(counts: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total).powi(2)).sum::<f64>()
}

impl GiniTreeBuilder<'_> {
    /// Grows a tree over `idx` (row indices, duplicates allowed for bootstrap samples).
    pub fn build<R: Rng>(&mut self, idx: &mut [usize], depth: usize, rng: &mut R) -> TreeNode {
        let mut counts = vec![0.0; self.n_classes];
        for &i in idx.iter() {
            counts[self.y[i]] += self.weight[i];
        }
        let total: f64 = counts.iter().sum();
        let impurity = gini(&counts, total);
        let depth_ok = self.max_depth.is_none_or(|d| depth < d);
        let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
        if pure || !depth_ok || idx.len() < self.min_samples_split {
            return self.leaf(counts, total);
        }
        let Some(split) = self.best_split(idx, rng) else {
            return self.leaf(counts, total);
        };
        self.importance[split.feature] += total * impurity
            - split.left_weight * split.left_impurity
            - split.right_weight * split.right_impurity;
        let mid = partition(idx, self.x, split.feature, split.threshold);
        let (l, r) = idx.split_at_mut(mid);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn leaf(&self, counts: Vec<f64>, total: f64) -> TreeNode {
        let value = if total > 0.0 {
            counts.iter().map(|c| c / total).collect()
        } else {
            vec![1.0 / self.n_classes as f64; self.n_classes]
        };
        TreeNode::Leaf { value }
    }

    /// Visits features in random order until `max_features` non-constant ones have
    /// been scored (constant features do not count towards the budget).
    fn best_split<R: Rng>(&self, idx: &[usize], rng: &mut R) -> Option<GiniSplit> {
        let mut features: Vec<usize> = (0..self.x.cols()).collect();
        features.shuffle(rng);
        let mut visited = 0;
        let mut best: Option<GiniSplit> = None;
        let mut entries: Vec<(f64, usize, f64)> = Vec::with_capacity(idx.len());
        for f in features {
            if visited >= self.max_features {
                break;
            }
            entries.clear();
            entries.extend(
                idx.iter()
                    .map(|&i| (self.x.get(i, f), self.y[i], self.weight[i])),
            );
            entries.sort_by(|a, b| a.0.total_cmp(&b.0));
            if entries[0].0 == entries[entries.len() - 1].0 {
                continue;
            }
            visited += 1;
            let mut total = vec![0.0; self.n_classes];
            for e in &entries {
                total[e.1] += e.2;
            }
            let total_w: f64 = total.iter().sum();
            let mut left = vec![0.0; self.n_classes];
            let mut left_w = 0.0;
            for k in 0..entries.len() - 1 {
                let (v, c, w) = entries[k];
                left[c] += w;
                left_w += w;
                let next = entries[k + 1].0;
                if v == next {
                    continue;
                }
                let right_w = total_w - left_w;
                if left_w <= 0.0 || right_w <= 0.0 {
                    continue;
                }
                let left_sq: f64 = left.iter().map(|c| c * c).sum::<f64>() / left_w;
                let right_sq: f64 = left
                    .iter()
                    .zip(&total)
                    .map(|(l, t)| (t - l) * (t - l))
                    .sum::<f64>()
                    / right_w;
                // Maximizing Σl²/w_L + Σr²/w_R minimizes w_L·gini_L + w_R·gini_R.
                let score = left_sq + right_sq;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    let right: Vec<f64> = left.iter().zip(&total).map(|(l, t)| t - l).collect();
                    best = Some(GiniSplit {
                        feature: f,
                        threshold: midpoint(v, next),
                        score,
                        left_weight: left_w,
                        left_impurity: gini(&left, left_w),
                        right_weight: right_w,
                        right_impurity: gini(&right, right_w),
                    });
                }
            }
        }
        best
    }
}

pub(crate) struct NewtonTreeBuilder<'a> {
    pub x: &'a Matrix,
    pub grad: &'a [f64],
    pub hess: &'a [f64],
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub lambda: f64,
    /// Multiplies every leaf value (the learning rate).
    pub shrinkage: f64,
    /// Total split gain accumulated per feature.
    pub gain: Vec<f64>,
}

struct NewtonSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl NewtonTreeBuilder<'_> {
    pub fn build(&mut self, idx: &mut [usize], depth: usize) -> TreeNode {
        let (g, h) = idx.iter().fold((0.0, 0.0), |(g, h), &i| {
            (g + self.grad[i], h + self.hess[i])
        });
        if depth < self.max_depth {
            if let Some(split) = self.best_split(idx, g, h) {
                self.gain[split.feature] += split.gain;
                let mid = partition(idx, self.x, split.feature, split.threshold);
                let (l, r) = idx.split_at_mut(mid);
                let left = self.build(l, depth + 1);
                let right = self.build(r, depth + 1);
                return TreeNode::Split {
                    feature: split.feature,
                    threshold: split.threshold,
                    left: Box::new(left),
                    right: Box::new(right),
                };
            }
        }
        TreeNode::Leaf {
            value: vec![-g / (h + self.lambda) * self.shrinkage],
        }
    }

    fn best_split(&self, idx: &[usize], g: f64, h: f64) -> Option<NewtonSplit> {
        let parent = g * g / (h + self.lambda);
        let mut best: Option<NewtonSplit> = None;
        let mut entries: Vec<(f64, f64, f64)> = Vec::with_capacity(idx.len());
        for f in 0..self.x.cols() {
            entries.clear();
            entries.extend(
                idx.iter()
                    .map(|&i| (self.x.get(i, f), self.grad[i], self.hess[i])),
            );
            entries.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..entries.len().saturating_sub(1) {
                let (v, gi, hi) = entries[k];
                gl += gi;
                hl += hi;
                let next = entries[k + 1].0;
                if v == next {
                    continue;
                }
                let (gr, hr) = (g - gl, h - hl);
                if hl < self.min_child_weight || hr < self.min_child_weight {
                    continue;
                }
                let gain =
                    0.5 * (gl * gl / (hl + self.lambda) + gr * gr / (hr + self.lambda) - parent);
                if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(NewtonSplit {
                        feature: f,
                        threshold: midpoint(v, next),
                        gain,
                    });
                }
            }
        }
        best
    }
}
