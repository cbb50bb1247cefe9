//! PCA denoising of embedding matrices, forest-importance selection of the top
//! embedding dimensions, and exact t-SNE for 2-D projections.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{self, ClassifierConfig, ClassifierError, TrainingData};
use crate::data::LabelVector;
use crate::matrix::Matrix;

#[derive(Debug, Error)]
pub enum ReductionError {
    #[error("PCA dimension {d} out of range 1..={max}")]
    InvalidD { d: usize, max: usize },
    #[error("expected {expected} columns, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("need at least {needed} rows, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("perplexity {perplexity} must lie in [1, {max}]")]
    PerplexityTooLarge { perplexity: f64, max: f64 },
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("feature selection requires m >= 1")]
    InvalidM,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

pub type Result<T> = std::result::Result<T, ReductionError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `d × D`, orthonormal rows in descending variance order.
    pub components: Matrix,
    pub explained_variance: Vec<f64>,
    pub d: usize,
}

impl PcaModel {
    /// Share of the total variance of the training data kept by each component.
    pub fn explained_variance_ratio(&self, total_variance: f64) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| v / total_variance)
            .collect()
    }

    /// Maps reduced coordinates back to the input space.
    pub fn inverse_transform(&self, z: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(z.rows(), self.mean.len());
        for r in 0..z.rows() {
            let row = out.row_mut(r);
            row.copy_from_slice(&self.mean);
            for (k, &zk) in z.row(r).iter().enumerate() {
                for (o, c) in row.iter_mut().zip(self.components.row(k)) {
                    *o += zk * c;
                }
            }
        }
        out
    }
}

/// Sum of per-column sample variances (denominator `n − 1`).
pub fn total_variance(x: &Matrix) -> f64 {
    let means = x.column_means();
    let n = x.rows() as f64;
    let mut ss = 0.0;
    for row in x.iter_rows() {
        for (v, m) in row.iter().zip(&means) {
            ss += (v - m) * (v - m);
        }
    }
    ss / (n - 1.0)
}

/// Largest valid `d` for an `n × D` input.
pub fn max_components(n: usize, width: usize) -> usize {
    n.saturating_sub(1).min(width)
}

/// Top-`d` right singular vectors of the centered matrix. The `seed` is accepted
/// for interface symmetry; the decomposition is deterministic.
pub fn pca_fit(x: &Matrix, d: usize, _seed: u64) -> Result<PcaModel> {
    let (n, width) = (x.rows(), x.cols());
    if n < 2 {
        return Err(ReductionError::TooFewPoints { needed: 2, got: n });
    }
    let max = max_components(n, width);
    if d == 0 || d > max {
        return Err(ReductionError::InvalidD { d, max });
    }
    if !x.is_finite() {
        return Err(ReductionError::NonFinite);
    }
    let mean = x.column_means();
    let centered = DMatrix::from_fn(n, width, |r, c| x.get(r, c) - mean[c]);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });

    let mut components = Matrix::zeros(d, width);
    let mut explained_variance = Vec::with_capacity(d);
    for (k, &src) in order.iter().take(d).enumerate() {
        let row = components.row_mut(k);
        for (c, v) in row.iter_mut().enumerate() {
            *v = v_t[(src, c)];
        }
        // the entry of largest magnitude (first on ties) is made positive
        let mut pivot = 0;
        for c in 1..width {
            if row[c].abs() > row[pivot].abs() {
                pivot = c;
            }
        }
        if row[pivot] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        let s = svd.singular_values[src];
        explained_variance.push(s * s / (n as f64 - 1.0));
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        d,
    })
}

/// `(X − mean) · componentsᵀ`.
pub fn pca_transform(model: &PcaModel, x: &Matrix) -> Result<Matrix> {
    if x.cols() != model.mean.len() {
        return Err(ReductionError::WidthMismatch {
            expected: model.mean.len(),
            got: x.cols(),
        });
    }
    let mut out = Matrix::zeros(x.rows(), model.d);
    let mut centered = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for ((c, v), m) in centered.iter_mut().zip(x.row(r)).zip(&model.mean) {
            *c = v - m;
        }
        for k in 0..model.d {
            let dot: f64 = centered
                .iter()
                .zip(model.components.row(k))
                .map(|(a, b)| a * b)
                .sum();
            out.set(r, k, dot);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    /// Normalized mean decrease in impurity per column.
    pub scores: Vec<f64>,
    /// Top columns by descending score, ties by lower index.
    pub selected_indices: Vec<usize>,
}

/// Ranks the columns of `x` with a balanced 100-tree random forest.
pub fn select_top_features(
    x: &Matrix,
    y: &LabelVector,
    m: usize,
    seed: u64,
) -> Result<ImportanceRanking> {
    if m == 0 {
        return Err(ReductionError::InvalidM);
    }
    let names: Vec<String> = (0..x.cols()).map(|i| format!("x{i}")).collect();
    let data = TrainingData::new(x, &y.values, y.n_classes(), &names);
    let model = classifiers::rf_fit(&data, &ClassifierConfig::random_forest(seed))?;
    let scores = classifiers::feature_importance(&model);
    let mut selected_indices = classifiers::ranked_features(&scores);
    selected_indices.truncate(m.min(x.cols()));
    Ok(ImportanceRanking {
        scores,
        selected_indices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Exaggeration ends and momentum switches from 0.5 to 0.8 at this iteration.
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    pub embedding: Matrix,
    /// KL(P‖Q) after every iteration (with the unexaggerated P).
    pub kl: Vec<f64>,
}

pub fn tsne_embed(x: &Matrix, perplexity: f64, iterations: usize, seed: u64) -> Result<Matrix> {
    let params = TsneParams {
        perplexity,
        iterations,
        seed,
        ..TsneParams::default()
    };
    Ok(tsne_run(x, &params)?.embedding)
}

fn squared_distances(x: &Matrix) -> Vec<f64> {
    let n = x.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Row-conditional Gaussian affinities with entropy `ln(perplexity)`, bisecting on
/// the precision `β = 1/(2σ²)`.
fn conditional_p(dist: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    const TOL: f64 = 1e-5;
    const MAX_STEPS: usize = 50;
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        let d = &dist[i * n..(i + 1) * n];
        // shift by the nearest-neighbour distance so the exponentials never all underflow
        let dmin = (0..n)
            .filter(|&j| j != i)
            .map(|j| d[j])
            .fold(f64::INFINITY, f64::min);
        let (mut beta, mut lo, mut hi) = (1.0, f64::NEG_INFINITY, f64::INFINITY);
        for _ in 0..MAX_STEPS {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                row[j] = if j == i {
                    0.0
                } else {
                    (-(d[j] - dmin) * beta).exp()
                };
                sum += row[j];
                weighted += (d[j] - dmin) * row[j];
            }
            let entropy = sum.ln() + beta * weighted / sum;
            let diff = entropy - target;
            if diff.abs() < TOL {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() {
                    (beta + hi) / 2.0
                } else {
                    beta * 2.0
                };
            } else {
                hi = beta;
                beta = if lo.is_finite() {
                    (beta + lo) / 2.0
                } else {
                    beta / 2.0
                };
            }
        }
        let sum: f64 = row.iter().sum();
        for j in 0..n {
            p[i * n + j] = row[j] / sum;
        }
    }
    p
}

/// Exact t-SNE, also reporting the KL trace.
pub fn tsne_run(x: &Matrix, params: &TsneParams) -> Result<TsneResult> {
    let n = x.rows();
    if n < 8 {
        return Err(ReductionError::TooFewPoints { needed: 8, got: n });
    }
    let max = (n as f64 - 1.0) / 3.0;
    if !(params.perplexity >= 1.0 && params.perplexity <= max) {
        return Err(ReductionError::PerplexityTooLarge {
            perplexity: params.perplexity,
            max,
        });
    }
    if !x.is_finite() {
        return Err(ReductionError::NonFinite);
    }

    let dist = squared_distances(x);
    let cond = conditional_p(&dist, n, params.perplexity);
    let mut p = vec![0.0; n * n];
    let norm = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / norm).max(1e-12);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid sigma");
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let mut velocity = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; 2 * n];
    let mut kl = Vec::with_capacity(params.iterations);

    for iter in 0..params.iterations {
        let exaggeration = if iter < params.exaggeration_iters {
            params.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < params.exaggeration_iters {
            0.5
        } else {
            0.8
        };

        let mut zsum = 0.0;
        for i in 0..n {
            num[i * n + i] = 0.0;
            for j in (i + 1)..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                num[j * n + i] = v;
                zsum += 2.0 * v;
            }
        }

        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut divergence = 0.0;
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (num[i * n + j] / zsum).max(1e-12);
                let pij = p[i * n + j];
                divergence += pij * (pij / q).ln();
                let mult = (exaggeration * pij - q) * num[i * n + j];
                gx += mult * (y[2 * i] - y[2 * j]);
                gy += mult * (y[2 * i + 1] - y[2 * j + 1]);
            }
            grad[2 * i] = 4.0 * gx;
            grad[2 * i + 1] = 4.0 * gy;
        }

        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (velocity[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(0.01)
            };
            velocity[k] = momentum * velocity[k] - params.learning_rate * gains[k] * grad[k];
            y[k] += velocity[k];
        }
        let (mx, my) = (0..n).fold((0.0, 0.0), |(a, b), i| (a + y[2 * i], b + y[2 * i + 1]));
        for i in 0..n {
            y[2 * i] -= mx / n as f64;
            y[2 * i + 1] -= my / n as f64;
        }
        kl.push(divergence);
    }

    Ok(TsneResult {
        embedding: Matrix::from_vec(n, 2, y),
        kl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points_give_diagonal_component() {
        let x = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]);
        let model = pca_fit(&x, 1, 0).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((model.components.get(0, 0) - h).abs() < 1e-8);
        assert!((model.components.get(0, 1) - h).abs() < 1e-8);
        let ratio = model.explained_variance_ratio(total_variance(&x));
        assert!((ratio[0] - 1.0).abs() < 1e-8);
        let z = pca_transform(&model, &Matrix::from_rows(&[[2.0, 2.0]])).unwrap();
        assert!(z.get(0, 0).abs() < 1e-12);
    }

    #[test]
    fn full_rank_round_trip() {
        let x = Matrix::from_rows(&[
            [1.0, 0.5, -2.0],
            [0.3, 2.0, 1.0],
            [-1.0, 0.0, 0.7],
            [2.2, -1.5, 0.1],
            [0.0, 0.4, -0.3],
        ]);
        let model = pca_fit(&x, 3, 0).unwrap();
        let back = model.inverse_transform(&pca_transform(&model, &x).unwrap());
        for (a, b) in back.as_slice().iter().zip(x.as_slice()) {
            assert!((a - b).abs() < 1e-8);
        }
        for w in model.explained_variance.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn range_and_width_errors() {
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(matches!(
            pca_fit(&x, 3, 0),
            Err(ReductionError::InvalidD { d: 3, max: 2 })
        ));
        assert!(matches!(
            pca_fit(&x, 0, 0),
            Err(ReductionError::InvalidD { .. })
        ));
        let model = pca_fit(&x, 2, 0).unwrap();
        assert!(matches!(
            pca_transform(&model, &Matrix::zeros(1, 4)),
            Err(ReductionError::WidthMismatch {
                expected: 3,
                got: 4
            })
        ));
    }

    #[test]
    fn separating_column_ranked_first() {
        let x = Matrix::from_rows(
            &(0..40)
                .map(|i| [3.0, if i % 2 == 0 { -1.0 } else { 1.0 }, 0.0])
                .collect::<Vec<_>>(),
        );
        let y = LabelVector {
            values: (0..40).map(|i| i % 2).collect(),
            class_names: vec!["a".into(), "b".into()],
        };
        let ranking = select_top_features(&x, &y, 5, 1).unwrap();
        assert_eq!(ranking.selected_indices, vec![1, 0, 2]);
        assert_eq!(ranking.scores, vec![0.0, 1.0, 0.0]);
        assert_eq!(ranking, select_top_features(&x, &y, 5, 1).unwrap());
        assert_eq!(
            select_top_features(&x, &y, 1, 1).unwrap().selected_indices,
            vec![1]
        );
    }

    #[test]
    fn tsne_preconditions() {
        let x = Matrix::zeros(10, 3);
        assert!(matches!(
            tsne_embed(&x, 5.0, 10, 0),
            Err(ReductionError::PerplexityTooLarge { .. })
        ));
        assert!(matches!(
            tsne_embed(&Matrix::zeros(7, 3), 1.0, 10, 0),
            Err(ReductionError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn perplexity_calibration() {
        let x = Matrix::from_rows(
            &(0..30)
                .map(|i| [(i as f64).sin() * 3.0, (i as f64 * 0.7).cos()])
                .collect::<Vec<_>>(),
        );
        let n = x.rows();
        let p = conditional_p(&squared_distances(&x), n, 5.0);
        for i in 0..n {
            let row = &p[i * n..(i + 1) * n];
            let h: f64 = -row
                .iter()
                .filter(|&&v| v > 0.0)
                .map(|v| v * v.ln())
                .sum::<f64>();
            assert!((h - 5f64.ln()).abs() < 1e-4, "row {i}: {h}");
        }
    }
}
