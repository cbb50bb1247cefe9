//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any fails. Needs no network and no model weights.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use embrich::ablation::{
    run_ablation, significance_matrix, AblationConfig, CellResult, FeatureSubsetId, ProtocolReport,
};
use embrich::classifiers::{
    fit, ordered_target_encode_with_order, ordered_target_encode_with_prior, predict, seeded_order,
    ClassifierConfig, TrainingData,
};
use embrich::data::{write_synthetic, SignalSource, SyntheticSpec};
use embrich::embeddings::{EmbeddingBackendDescriptor, EmbeddingCache};
use embrich::evaluation::{
    bonferroni_decisions, compute_metrics, paired_t_test, stratified_kfold, student_t_cdf, Metric,
};
use embrich::reduction::{pca_fit, pca_transform, total_variance};
use embrich::report::{emit_bundle, MANIFEST_FILE};
use embrich::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn names(q: usize) -> Vec<String> {
    (0..q).map(|i| format!("f{i}")).collect()
}

fn proba_from_class1(p: &[f64]) -> Matrix {
    Matrix::from_rows(&p.iter().map(|&v| [1.0 - v, v]).collect::<Vec<_>>())
}

fn training_accuracy(x: &Matrix, y: &[usize], cfg: &ClassifierConfig) -> f64 {
    let n = names(x.cols());
    let model = fit(&TrainingData::new(x, y, 2, &n), cfg).unwrap();
    let pred = predict(&model, x).unwrap();
    pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (t, p, s) = common::random_metric_instance(&mut rng);
        let m = compute_metrics(&t, &p, &s).map_err(|e| e.to_string())?;
        let o = common::metrics_oracle(&t, &p, &s);
        for (g, e) in [m.accuracy, m.balanced_accuracy, m.weighted_f1, m.roc_auc].iter().zip(&o) {
            worst = worst.max((g - e).abs());
        }
    }
    check(worst < 1e-12, || format!("max deviation {worst:e} over 1000 instances"))?;

    let y_true = [0, 0, 1, 1, 1];
    let y_pred = [0, 1, 1, 1, 0];
    let scores = proba_from_class1(&[0.2, 0.6, 0.7, 0.9, 0.4]);
    let m = compute_metrics(&y_true, &y_pred, &scores).map_err(|e| e.to_string())?;
    let got = [m.accuracy, m.balanced_accuracy, m.weighted_f1];
    let want = [0.6, 7.0 / 12.0, 0.6];
    check(got.iter().zip(&want).all(|(g, w)| (g - w).abs() < 1e-12), || {
        format!("label fixture {got:?}, expected {want:?}")
    })?;
    let ranked = proba_from_class1(&[0.1, 0.4, 0.35, 0.8]);
    let auc = compute_metrics(&[0, 0, 1, 1], &[0, 1, 0, 1], &ranked).map_err(|e| e.to_string())?.roc_auc;
    check((auc - 0.75).abs() < 1e-12, || format!("four-point AUC {auc}"))?;
    Ok(format!("1000 instances max |Δ| = {worst:.1e} (tol 1e-12); fixtures {got:.6?}, AUC {auc}"))
}

fn statistics_oracle() -> Outcome {
    let b = [0.80, 0.81, 0.79, 0.82, 0.78];
    let d = [0.01, 0.03, 0.02, 0.00, 0.04];
    let a: Vec<f64> = b.iter().zip(&d).map(|(x, y)| x + y).collect();
    let r = paired_t_test(&a, &b).map_err(|e| e.to_string())?;
    check(
        (r.t_statistic - 2.828_427).abs() < 1e-6 && r.df == 4 && (r.p_value - 0.0474).abs() <= 5e-4,
        || format!("t = {}, df = {}, p = {}", r.t_statistic, r.df, r.p_value),
    )?;

    let mut worst = 0.0f64;
    for df in 1..=30 {
        for step in -40..=40 {
            let t = f64::from(step) * 0.25;
            worst = worst.max((student_t_cdf(t, f64::from(df)) - common::t_cdf_quadrature(t, f64::from(df))).abs());
        }
    }
    check(worst < 1e-8, || format!("t-CDF deviation {worst:e}"))?;

    // 7 subsets, 5 folds of pure noise per trial; a family error is any rejection
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut errors = 0;
    for _ in 0..500 {
        let groups: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..5).map(|_| 0.8 + 0.02 * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let mut p = Vec::with_capacity(21);
        for i in 0..7 {
            for j in (i + 1)..7 {
                p.push(paired_t_test(&groups[i], &groups[j]).map_err(|e| e.to_string())?.p_value);
            }
        }
        errors += usize::from(bonferroni_decisions(&p, 0.05).iter().any(|&s| s));
    }
    let fwer = errors as f64 / 500.0;
    check(fwer <= 0.07, || format!("FWER {fwer}"))?;
    Ok(format!(
        "t = {:.6}, df = {}, p = {:.4} (tol 5e-4); t-CDF max |Δ| = {worst:.1e} (tol 1e-8); FWER = {fwer:.3} (max 0.07)",
        r.t_statistic, r.df, r.p_value
    ))
}

fn pca_correctness() -> Outcome {
    let x = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]);
    let model = pca_fit(&x, 1, 0).map_err(|e| e.to_string())?;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let c = (model.components.get(0, 0), model.components.get(0, 1));
    let ratio = model.explained_variance_ratio(total_variance(&x))[0];
    check((c.0 - h).abs() < 1e-8 && (c.1 - h).abs() < 1e-8 && (ratio - 1.0).abs() < 1e-8, || {
        format!("component {c:?}, ratio {ratio}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut y = Matrix::zeros(40, 6);
    for r in 0..40 {
        for col in 0..6 {
            let v: f64 = rng.sample(StandardNormal);
            y.set(r, col, v * (1.0 + col as f64) + 0.5 * col as f64);
        }
    }
    let full = pca_fit(&y, 6, 0).map_err(|e| e.to_string())?;
    let z = pca_transform(&full, &y).map_err(|e| e.to_string())?;
    let back = full.inverse_transform(&z);
    let round_trip = back.as_slice().iter().zip(y.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(round_trip < 1e-8, || format!("round-trip error {round_trip:e}"))?;

    let means = z.column_means();
    let mut off = 0.0f64;
    for a in 0..6 {
        for b in 0..6 {
            if a != b {
                let cov = z.iter_rows().map(|r| (r[a] - means[a]) * (r[b] - means[b])).sum::<f64>() / 39.0;
                off = off.max(cov.abs());
            }
        }
    }
    check(off < 1e-6, || format!("off-diagonal covariance {off:e}"))?;
    Ok(format!(
        "component ({:.9}, {:.9}), explained 100%; round-trip {round_trip:.1e} (tol 1e-8); max off-diag {off:.1e} (tol 1e-6)",
        c.0, c.1
    ))
}

fn classifier_learnability() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pts: Vec<[f64; 2]> = (0..200)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let y: Vec<usize> = pts.iter().map(|p| usize::from((p[0] > 0.0) != (p[1] > 0.0))).collect();
    let x = Matrix::from_rows(&pts);
    let gbt = ClassifierConfig {
        trees: 50,
        max_depth: Some(2),
        learning_rate: 0.1,
        ..ClassifierConfig::gbt(0)
    };
    let xor = training_accuracy(&x, &y, &gbt);
    check(xor >= 0.98, || format!("XOR accuracy {xor}"))?;

    let n = names(2);
    let model = fit(&TrainingData::new(&x, &y, 2, &n), &gbt).map_err(|e| e.to_string())?;
    let losses = &model.training_log_loss;
    check(losses.windows(2).all(|w| w[1] <= w[0] + 1e-12), || format!("log-loss rose: {losses:?}"))?;

    let sx = Matrix::from_rows(&(0..40).map(|i| [i as f64]).collect::<Vec<_>>());
    let sy: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
    let rf = ClassifierConfig {
        trees: 100,
        ..ClassifierConfig::random_forest(1)
    };
    let separable = training_accuracy(&sx, &sy, &rf);
    check(separable == 1.0, || format!("RF separable accuracy {separable}"))?;

    let bx = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]);
    let n1 = names(1);
    let zero = ClassifierConfig {
        trees: 0,
        ..ClassifierConfig::gbt(0)
    };
    let base = fit(&TrainingData::new(&bx, &[1, 1, 0, 1], 2, &n1), &zero).map_err(|e| e.to_string())?.base_score[0];
    check((base - 3f64.ln()).abs() < 1e-9, || format!("base_score {base}"))?;
    Ok(format!(
        "XOR {xor:.3} (min 0.98); RF separable {separable:.3}; log-loss {:.4} -> {:.4} monotone over {} rounds; base_score {base:.9}",
        losses[0],
        losses[losses.len() - 1],
        losses.len() - 1
    ))
}

fn ordered_ts_leak_freedom() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut checks = 0usize;
    for trial in 0..200u64 {
        let n = rng.random_range(2..40usize);
        let cats: Vec<u8> = (0..n).map(|_| rng.random_range(0..4u8)).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
        let order = seeded_order(n, trial);
        let prior = y.iter().sum::<f64>() / n as f64;
        let mut pos = vec![0; n];
        for (p, &i) in order.iter().enumerate() {
            pos[i] = p;
        }
        let base = ordered_target_encode_with_prior(&cats, &y, 1.0, &order, prior);
        for i in 0..n {
            let mut perturbed = y.clone();
            for j in 0..n {
                if pos[j] >= pos[i] && rng.random_bool(0.5) {
                    perturbed[j] = 1.0 - perturbed[j];
                }
            }
            let enc = ordered_target_encode_with_prior(&cats, &perturbed, 1.0, &order, prior);
            check(enc[i] == base[i], || format!("trial {trial}: row {i} changed"))?;
            checks += 1;
        }
    }
    let enc = ordered_target_encode_with_order(&["A", "A", "B", "A"], &[1.0, 0.0, 1.0, 1.0], 1.0, &[0, 1, 2, 3]);
    let want = [0.75, 0.875, 0.75, 7.0 / 12.0];
    check(enc.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-9), || format!("hand fixture {enc:?}"))?;
    Ok(format!("200 permutations, {checks} row checks unchanged; fixture {enc:.6?} (tol 1e-9)"))
}

fn ablation_config(dir: &Path, n: usize, dim: usize, pca_d: usize, top_m: usize, trees: usize) -> AblationConfig {
    let spec = SyntheticSpec {
        n,
        numeric_count: 4,
        categorical_count: 2,
        signal: SignalSource::TextOnly,
        label_noise: 0.0,
        noise_seed: 0,
    };
    AblationConfig {
        datasets: vec![write_synthetic(&spec, dir, "text_signal").unwrap()],
        backends: vec![
            EmbeddingBackendDescriptor::hash("gpt2", dim, 1),
            EmbeddingBackendDescriptor::hash("roberta", dim, 2),
        ],
        classifiers: vec![ClassifierConfig {
            trees,
            ..ClassifierConfig::random_forest(0)
        }],
        pca_d,
        top_m,
        folds: 5,
        alpha: 0.05,
        seed: 0,
        fold_safe: false,
        tsne: None,
    }
}

fn bundle_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                let mut bytes = fs::read(&path).unwrap();
                if rel == MANIFEST_FILE {
                    let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                    v["started_unix"] = 0.into();
                    bytes = serde_json::to_vec(&v).unwrap();
                }
                out.insert(rel, bytes);
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn algorithm_shape() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ablation_config(dir.path(), 200, 32, 12, 5, 30);
    let mut bundles = Vec::new();
    let mut first = None;
    for run in 0..2 {
        let report = run_ablation(&cfg, &EmbeddingCache::in_memory()).map_err(|e| e.to_string())?;
        let out = dir.path().join(format!("bundle{run}"));
        emit_bundle(&report, &out).map_err(|e| e.to_string())?;
        bundles.push(bundle_files(&out));
        first.get_or_insert(report);
    }
    let report = first.unwrap();
    let full = report.primary();
    check(full.failures.is_empty(), || format!("failures: {:?}", full.failures))?;
    let values: usize = full.cells.iter().map(|c| c.fold_metrics.len() * Metric::ALL.len()).sum();
    check(values == 7 * 5 * 4, || format!("{values} fold-metric values"))?;

    let p = report.datasets[0].baseline_width;
    let m = 5;
    let want = vec![p, m, m, p + m, p + m, 2 * m, p + 2 * m];
    let got: Vec<usize> = full.cells.iter().map(|c| c.width).collect();
    check(got == want, || format!("widths {got:?}, expected {want:?}"))?;

    let differing: Vec<&String> = bundles[0]
        .iter()
        .filter(|(k, v)| bundles[1].get(*k) != Some(*v))
        .map(|(k, _)| k)
        .collect();
    check(bundles[0].len() == bundles[1].len() && differing.is_empty(), || {
        format!("bundles differ in {differing:?}")
    })?;
    Ok(format!(
        "{values} fold-metric values; widths {got:?} (p = {p}, m = {m}); {} files byte-identical across runs",
        bundles[0].len()
    ))
}

fn mean_accuracy(cell: &CellResult) -> f64 {
    cell.mean.get(Metric::Accuracy)
}

fn enrichment_effect() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ablation_config(dir.path(), 1000, 64, 50, 10, 100);
    let report = run_ablation(&cfg, &EmbeddingCache::in_memory()).map_err(|e| e.to_string())?;
    let full: &ProtocolReport = report.primary();
    let ds = &report.datasets[0].id;
    let clf = &full.cells[0].classifier;
    let cell = |s| full.cell(ds, clf, s).ok_or_else(|| format!("missing cell {s:?}"));
    let base = mean_accuracy(cell(FeatureSubsetId::Baseline)?);
    let enriched = mean_accuracy(cell(FeatureSubsetId::BaselineGpt2Selected)?);
    let gap = enriched - base;
    check(gap >= 0.15, || format!("gap {gap:.4} (baseline {base:.4}, enriched {enriched:.4})"))?;

    let sig = significance_matrix(full, &FeatureSubsetId::ALL, ds, clf, Metric::Accuracy, cfg.alpha)
        .map_err(|e| e.to_string())?;
    let significant = sig.get(FeatureSubsetId::Baseline, FeatureSubsetId::BaselineGpt2Selected) == Some(true);
    let p = sig.p_value[0][3];
    check(significant, || format!("not significant after Bonferroni: p = {p}"))?;
    Ok(format!(
        "accuracy {base:.4} -> {enriched:.4}, gap {gap:.4} (min 0.15); p = {p:.2e} < 0.05/21"
    ))
}

fn stratification_property() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..100u64 {
        let classes = rng.random_range(2..=5usize);
        let n = rng.random_range(20..300usize);
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let split = stratified_kfold(&y, 5, trial).map_err(|e| e.to_string())?;
        check(common::folds_partition(n, &split.folds), || format!("trial {trial}: not a partition"))?;
        for c in 0..classes {
            let total = y.iter().filter(|&&v| v == c).count() as f64;
            for f in &split.folds {
                let cnt = f.iter().filter(|&&i| y[i] == c).count() as f64;
                check((cnt - total / 5.0).abs() <= 1.0, || {
                    format!("trial {trial}: class {c} has {cnt} of {total} in one fold")
                })?;
            }
        }
    }
    Ok("100 label vectors, every class within ±1 of its proportional share in all 5 folds".into())
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { name: "metric oracle equivalence", budget: Duration::from_secs(10), run: metric_oracle },
        Criterion { name: "statistics oracle", budget: Duration::from_secs(30), run: statistics_oracle },
        Criterion { name: "PCA correctness", budget: Duration::from_secs(5), run: pca_correctness },
        Criterion { name: "classifier learnability", budget: Duration::from_secs(60), run: classifier_learnability },
        Criterion { name: "ordered-TS leak freedom", budget: Duration::from_secs(60), run: ordered_ts_leak_freedom },
        Criterion { name: "ablation shape and determinism", budget: Duration::from_secs(120), run: algorithm_shape },
        Criterion { name: "controlled enrichment effect", budget: Duration::from_secs(180), run: enrichment_effect },
        Criterion { name: "stratification property", budget: Duration::from_secs(60), run: stratification_property },
    ];
    let results: Vec<(String, bool)> = std::thread::scope(|scope| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|c| {
                scope.spawn(move || {
                    let start = Instant::now();
                    let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|_| Err("panicked".into()));
                    (outcome, start.elapsed())
                })
            })
            .collect();
        criteria
            .iter()
            .zip(handles)
            .map(|(c, h)| {
                let (outcome, elapsed) = h.join().unwrap();
                let over = elapsed > c.budget;
                let (ok, detail) = match outcome {
                    Ok(d) if !over => (true, d),
                    Ok(d) => (false, format!("{d}; exceeded budget {:?}", c.budget)),
                    Err(e) => (false, e),
                };
                let tag = if ok { "PASS" } else { "FAIL" };
                (format!("{tag}  {:<32} {:>7.2}s  {detail}", c.name, elapsed.as_secs_f64()), ok)
            })
            .collect()
    });
    for (line, _) in &results {
        println!("{line}");
    }
    let failed = results.iter().filter(|r| !r.1).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
