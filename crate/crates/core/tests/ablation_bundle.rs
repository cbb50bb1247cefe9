use std::fs;
use std::path::Path;

use embrich::ablation::{
    run_ablation, AblationConfig, AblationReport, FeatureSubsetId, Protocol, TsneSettings,
};
use embrich::classifiers::ClassifierConfig;
use embrich::data::{write_synthetic, SignalSource, SyntheticSpec};
use embrich::embeddings::{EmbeddingBackendDescriptor, EmbeddingCache};
use embrich::evaluation::Metric;
use embrich::report::{
    default_charts, emit_bundle, render_figures, render_svg, verify_bundle, BundleManifest, ChartKind, ChartSpec,
    ReportError,
};

fn small_config(dir: &Path, fold_safe: bool) -> AblationConfig {
    let spec = SyntheticSpec {
        n: 150,
        numeric_count: 3,
        categorical_count: 1,
        signal: SignalSource::TextOnly,
        label_noise: 0.05,
        noise_seed: 11,
    };
    let ds = write_synthetic(&spec, dir, "toy").unwrap();
    AblationConfig {
        datasets: vec![ds],
        backends: vec![
            EmbeddingBackendDescriptor::hash("gpt2", 24, 1),
            EmbeddingBackendDescriptor::hash("roberta", 24, 2),
        ],
        classifiers: vec![ClassifierConfig {
            trees: 15,
            ..ClassifierConfig::random_forest(0)
        }],
        pca_d: 8,
        top_m: 3,
        folds: 3,
        alpha: 0.05,
        seed: 4,
        fold_safe,
        tsne: Some(TsneSettings {
            perplexity: 15.0,
            iterations: 300,
        }),
    }
}

fn run(dir: &Path, fold_safe: bool) -> AblationReport {
    run_ablation(&small_config(dir, fold_safe), &EmbeddingCache::in_memory()).unwrap()
}

#[test]
fn report_covers_every_cell_with_consistent_means() {
    let dir = tempfile::tempdir().unwrap();
    let report = run(dir.path(), true);
    assert_eq!(report.protocols.len(), 2);
    let ds = &report.datasets[0];
    let (p, m) = (ds.baseline_width, 3);
    assert_eq!(p, 3 + 4);
    let expected = [p, m, m, p + m, p + m, 2 * m, p + 2 * m];
    for protocol in &report.protocols {
        assert!(protocol.failures.is_empty(), "{:?}", protocol.failures);
        assert_eq!(protocol.cells.len(), 7);
        for (cell, (&id, &w)) in protocol.cells.iter().zip(FeatureSubsetId::ALL.iter().zip(&expected)) {
            assert_eq!(cell.subset, id);
            assert_eq!(cell.width, w);
            assert_eq!(cell.fold_metrics.len(), 3);
            assert_eq!(cell.top_features.len(), w.min(10));
            assert_eq!(cell.oof_scores.rows(), ds.rows);
            for metric in Metric::ALL {
                let v = cell.fold_values(metric);
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                assert!((mean - cell.mean.get(metric)).abs() < 1e-12);
            }
        }
    }
    let widths: Vec<usize> = ds.subset_widths.iter().map(|(_, w)| *w).collect();
    assert_eq!(widths, expected);
    assert_eq!(report.projections.len(), 2);
    assert_eq!(report.projections[0].points.rows(), ds.rows);
    let full = report.protocol(Protocol::FullData).unwrap();
    let safe = report.protocol(Protocol::FoldSafe).unwrap();
    assert_eq!(full.cells[0].fold_metrics, safe.cells[0].fold_metrics, "baseline does not depend on the protocol");
}

#[test]
fn bundle_hashes_verify_and_reemit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let report = run(dir.path(), true);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let ma = emit_bundle(&report, &a).unwrap();
    let mb = emit_bundle(&report, &b).unwrap();
    assert_eq!(ma.artifacts, mb.artifacts);
    assert!(verify_bundle(&a).unwrap().is_empty());
    assert_eq!(BundleManifest::read(&a).unwrap(), ma);

    let paths: Vec<&str> = ma.artifacts.iter().map(|x| x.path.as_str()).collect();
    for required in [
        "metrics.csv",
        "means.csv",
        "ttests.csv",
        "wins.csv",
        "datasets.csv",
        "embeddings.csv",
        "fold_safe/metrics.csv",
        "fold_safe/wins.csv",
        "significance/toy_random_forest_accuracy.csv",
        "importance/toy_random_forest_Baseline.csv",
        "roc/toy_random_forest.csv",
        "tsne/toy_gpt2.csv",
    ] {
        assert!(paths.contains(&required), "missing {required}");
    }
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 7 * 3);
    let ttests = fs::read_to_string(a.join("ttests.csv")).unwrap();
    assert_eq!(ttests.lines().count(), 1 + 4 * 21);

    fs::write(a.join("wins.csv"), "tampered").unwrap();
    assert_eq!(verify_bundle(&a).unwrap(), vec!["wins.csv".to_string()]);
}

#[test]
fn empty_report_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut report = run(dir.path(), false);
    report.protocols[0].cells.clear();
    assert!(matches!(
        emit_bundle(&report, &dir.path().join("out")),
        Err(ReportError::IncompleteReport(_))
    ));
}

#[test]
fn unreadable_dataset_is_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), false);
    let mut broken = cfg.datasets[0].clone();
    broken.path = dir.path().join("absent.csv");
    cfg.datasets.insert(0, broken);
    cfg.datasets[1].path = dir.path().join("toy.csv");
    // distinct ids: the broken one is named after its file
    let report = run_ablation(&cfg, &EmbeddingCache::in_memory()).unwrap();
    let full = report.primary();
    assert_eq!(full.failures.len(), 1);
    assert_eq!(full.failures[0].dataset, "absent");
    assert!(full.failures[0].classifier.is_none());
    assert_eq!(full.cells.len(), 7);
}

#[test]
fn figures_render_from_bundle_alone() {
    let dir = tempfile::tempdir().unwrap();
    let report = run(dir.path(), false);
    let out = dir.path().join("bundle");
    emit_bundle(&report, &out).unwrap();
    drop(report);
    let charts = default_charts(&out).unwrap();
    let files = render_figures(&out).unwrap();
    assert_eq!(files.len(), charts.len());
    let means = fs::read_to_string(out.join("figures/means_toy_random_forest.svg")).unwrap();
    assert_eq!(means.matches(r#"class="bar""#).count(), 28);
    assert!(means.starts_with("<svg") && !means.contains("href"));
    let wins = fs::read_to_string(out.join("figures/wins.svg")).unwrap();
    assert!(wins.contains("one win per (dataset, metric)"));
    let again = render_figures(&out).unwrap();
    assert_eq!(fs::read_to_string(&again[0]).unwrap(), fs::read_to_string(&files[0]).unwrap());
}

#[test]
fn all_false_significance_matrix_is_uniformly_light() {
    let dir = tempfile::tempdir().unwrap();
    let names: Vec<&str> = FeatureSubsetId::ALL.iter().map(|s| s.as_str()).collect();
    let mut csv = format!("subset,{}\n", names.join(","));
    for n in &names {
        csv.push_str(&format!("{n}{}\n", ",0".repeat(7)));
    }
    fs::write(dir.path().join("sig.csv"), csv).unwrap();
    let spec = ChartSpec {
        kind: ChartKind::BooleanMatrix,
        title: "none significant".into(),
        data: "sig.csv".into(),
        filter: Vec::new(),
        caption: None,
    };
    let svg = render_svg(&spec, dir.path()).unwrap();
    let cells: Vec<&str> = svg.lines().filter(|l| l.contains(r#"class="cell""#)).collect();
    assert_eq!(cells.len(), 49);
    assert!(cells.iter().all(|l| l.contains("#eeeeee")));
    assert_eq!(svg, render_svg(&spec, dir.path()).unwrap());

    let missing = ChartSpec {
        data: "nope.csv".into(),
        ..spec
    };
    assert!(matches!(render_svg(&missing, dir.path()), Err(ReportError::MissingData(_))));
}
