//! Report bundle (CSV tables plus a hashed manifest) and SVG figures rendered
//! from the bundle.

mod svg;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ablation::{
    significance_matrices, win_counts, AblationConfig, AblationReport, CellFailure, Protocol, ProtocolReport,
};
use crate::evaluation::{roc_curve, Metric};

pub use svg::{default_charts, render_svg, ChartKind, ChartSpec};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report incomplete: {0}")]
    IncompleteReport(String),
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ReportError>;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Caption explaining what one win is.
pub const WIN_UNIT: &str = "one win per (dataset, metric) for each classifier, awarded to the subset \
     with the highest mean fold score; exact ties go to the earlier subset";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the bundle root, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub tool_version: String,
    pub template_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub fold_safe: bool,
    pub alpha: f64,
    /// The only field that differs between otherwise identical runs.
    pub started_unix: u64,
    pub win_unit: String,
    pub datasets: Vec<String>,
    pub classifiers: Vec<String>,
    pub subsets: Vec<String>,
    pub protocols: Vec<String>,
    pub failures: Vec<CellFailure>,
    pub config: AblationConfig,
    /// Every other file of the bundle, sorted by path.
    pub artifacts: Vec<Artifact>,
}

impl BundleManifest {
    pub fn read(bundle: &Path) -> Result<Self> {
        let path = bundle.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| ReportError::MissingData(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// File-name-safe form of an identifier.
pub fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '.') { c } else { '_' })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct BundleWriter {
    root: PathBuf,
    artifacts: Vec<Artifact>,
}

impl BundleWriter {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.artifacts.push(Artifact {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn write_csv(&mut self, rel: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| ReportError::Io(e.into_error()))?;
        self.write(rel, &bytes)
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn metric_values(m: &crate::evaluation::MetricsRecord) -> Vec<String> {
    Metric::ALL.iter().map(|&k| num(m.get(k))).collect()
}

/// Writes the bundle into `out_dir` and returns the manifest (also written as
/// `manifest.json`).
pub fn emit_bundle(report: &AblationReport, out_dir: &Path) -> Result<BundleManifest> {
    if report.protocols.iter().all(|p| p.cells.is_empty()) {
        return Err(ReportError::IncompleteReport("no cell produced results".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut w = BundleWriter {
        root: out_dir.to_path_buf(),
        artifacts: Vec::new(),
    };
    for p in &report.protocols {
        let prefix = match p.protocol {
            Protocol::FullData => String::new(),
            Protocol::FoldSafe => "fold_safe/".to_string(),
        };
        write_protocol(&mut w, report, p, &prefix)?;
    }
    write_datasets(&mut w, report)?;

    let failures: Vec<CellFailure> = report.protocols.iter().flat_map(|p| p.failures.iter().cloned()).collect();
    w.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = BundleManifest {
        tool_version: report.manifest.tool_version.clone(),
        template_version: report.manifest.template_version.clone(),
        config_hash: report.manifest.config_hash.clone(),
        seed: report.manifest.seed,
        fold_safe: report.manifest.fold_safe,
        alpha: report.config.alpha,
        started_unix: report.manifest.started_unix,
        win_unit: WIN_UNIT.to_string(),
        datasets: report.dataset_ids(),
        classifiers: report.classifier_ids(),
        subsets: report.subsets().iter().map(|s| s.as_str().to_string()).collect(),
        protocols: report.protocols.iter().map(|p| p.protocol.as_str().to_string()).collect(),
        failures,
        config: report.config.clone(),
        artifacts: w.artifacts,
    };
    fs::write(
        out_dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

fn write_protocol(w: &mut BundleWriter, report: &AblationReport, p: &ProtocolReport, prefix: &str) -> Result<()> {
    let metric_names: Vec<&str> = Metric::ALL.iter().map(|m| m.as_str()).collect();

    let mut header = vec!["dataset", "classifier", "subset", "fold"];
    header.extend(&metric_names);
    let mut rows = Vec::new();
    for c in &p.cells {
        for (f, m) in c.fold_metrics.iter().enumerate() {
            let mut r = vec![c.dataset.clone(), c.classifier.clone(), c.subset.to_string(), f.to_string()];
            r.extend(metric_values(m));
            rows.push(r);
        }
    }
    w.write_csv(&format!("{prefix}metrics.csv"), &header, &rows)?;

    let mut header = vec!["dataset", "classifier", "subset", "width"];
    header.extend(&metric_names);
    let rows: Vec<Vec<String>> = p
        .cells
        .iter()
        .map(|c| {
            let mut r = vec![c.dataset.clone(), c.classifier.clone(), c.subset.to_string(), c.width.to_string()];
            r.extend(metric_values(&c.mean));
            r
        })
        .collect();
    w.write_csv(&format!("{prefix}means.csv"), &header, &rows)?;

    let mats = significance_matrices(report, p.protocol, report.config.alpha);
    let rows: Vec<Vec<String>> = mats
        .iter()
        .flat_map(|m| m.rows())
        .map(|t| {
            vec![
                t.dataset,
                t.classifier,
                t.metric.to_string(),
                t.subset_a.to_string(),
                t.subset_b.to_string(),
                num(t.t),
                t.df.to_string(),
                num(t.p),
                t.significant.to_string(),
            ]
        })
        .collect();
    w.write_csv(
        &format!("{prefix}ttests.csv"),
        &["dataset", "classifier", "metric", "subset_a", "subset_b", "t", "df", "p", "significant"],
        &rows,
    )?;

    for m in &mats {
        let mut header = vec!["subset".to_string()];
        header.extend(m.subsets.iter().map(|s| s.to_string()));
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows: Vec<Vec<String>> = m
            .subsets
            .iter()
            .zip(&m.significant)
            .map(|(s, row)| {
                std::iter::once(s.to_string())
                    .chain(row.iter().map(|&b| u8::from(b).to_string()))
                    .collect()
            })
            .collect();
        let rel = format!(
            "{prefix}significance/{}_{}_{}.csv",
            slug(&m.dataset),
            slug(&m.classifier),
            m.metric
        );
        w.write_csv(&rel, &header_refs, &rows)?;
    }

    let wins = win_counts(report, p.protocol);
    let mut header = vec!["subset".to_string()];
    header.extend(wins.classifiers.iter().cloned());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = wins
        .subsets
        .iter()
        .enumerate()
        .map(|(si, s)| {
            std::iter::once(s.to_string())
                .chain(wins.tallies.iter().map(|t| t[si].to_string()))
                .collect()
        })
        .collect();
    w.write_csv(&format!("{prefix}wins.csv"), &header_refs, &rows)?;

    for c in &p.cells {
        let stem = format!("{}_{}_{}", slug(&c.dataset), slug(&c.classifier), c.subset);
        let rows: Vec<Vec<String>> = c
            .top_features
            .iter()
            .enumerate()
            .map(|(i, (name, score))| vec![(i + 1).to_string(), name.clone(), num(*score)])
            .collect();
        w.write_csv(&format!("{prefix}importance/{stem}.csv"), &["rank", "feature", "score"], &rows)?;
        let rows: Vec<Vec<String>> = c
            .fold_importance
            .iter()
            .enumerate()
            .flat_map(|(f, imp)| imp.iter().map(move |(name, score)| vec![f.to_string(), name.clone(), num(*score)]))
            .collect();
        w.write_csv(&format!("{prefix}importance/{stem}_folds.csv"), &["fold", "feature", "score"], &rows)?;
    }

    write_roc(w, report, p, prefix)?;

    if !p.failures.is_empty() {
        let rows: Vec<Vec<String>> = p
            .failures
            .iter()
            .map(|f| {
                vec![
                    f.dataset.clone(),
                    f.classifier.clone().unwrap_or_default(),
                    f.subset.map(|s| s.to_string()).unwrap_or_default(),
                    f.error.clone(),
                ]
            })
            .collect();
        w.write_csv(&format!("{prefix}failures.csv"), &["dataset", "classifier", "subset", "error"], &rows)?;
    }
    Ok(())
}

/// One file per (dataset, classifier): out-of-fold ROC curves of every subset
/// (class 1 for binary tasks, every class one-vs-rest otherwise).
fn write_roc(w: &mut BundleWriter, report: &AblationReport, p: &ProtocolReport, prefix: &str) -> Result<()> {
    for ds in &report.datasets {
        let n_classes = ds.class_names.len();
        let classes: Vec<usize> = if n_classes == 2 { vec![1] } else { (0..n_classes).collect() };
        for classifier in report.classifier_ids() {
            let mut rows = Vec::new();
            for subset in report.subsets() {
                let Some(cell) = p.cell(&ds.id, &classifier, subset) else {
                    continue;
                };
                for &k in &classes {
                    let positive: Vec<bool> = ds.labels.iter().map(|&y| y == k).collect();
                    let Ok(curve) = roc_curve(&positive, &cell.oof_scores.column(k)) else {
                        continue;
                    };
                    for pt in curve {
                        rows.push(vec![
                            subset.to_string(),
                            ds.class_names[k].clone(),
                            num(pt.fpr),
                            num(pt.tpr),
                            num(pt.threshold),
                        ]);
                    }
                }
            }
            if !rows.is_empty() {
                let rel = format!("{prefix}roc/{}_{}.csv", slug(&ds.id), slug(&classifier));
                w.write_csv(&rel, &["subset", "class", "fpr", "tpr", "threshold"], &rows)?;
            }
        }
    }
    Ok(())
}

fn write_datasets(w: &mut BundleWriter, report: &AblationReport) -> Result<()> {
    let mut rows = Vec::new();
    for ds in &report.datasets {
        for (subset, width) in &ds.subset_widths {
            rows.push(vec![
                ds.id.clone(),
                ds.rows.to_string(),
                ds.baseline_width.to_string(),
                ds.class_names.len().to_string(),
                subset.to_string(),
                width.to_string(),
            ]);
        }
    }
    w.write_csv(
        "datasets.csv",
        &["dataset", "rows", "baseline_width", "classes", "subset", "width"],
        &rows,
    )?;

    let mut rows = Vec::new();
    for ds in &report.datasets {
        for b in &ds.backends {
            let retained: f64 = b.explained_variance_ratio.iter().sum();
            rows.push(vec![
                ds.id.clone(),
                b.model_id.clone(),
                b.embedding_dim.to_string(),
                b.pca_d.to_string(),
                num(retained),
                b.selected_names.join(" "),
                b.corpus_fingerprint.clone(),
            ]);
        }
    }
    w.write_csv(
        "embeddings.csv",
        &["dataset", "model", "dim", "pca_d", "explained_variance", "selected", "corpus_fingerprint"],
        &rows,
    )?;

    for proj in &report.projections {
        let Some(ds) = report.datasets.iter().find(|d| d.id == proj.dataset) else {
            continue;
        };
        let rows: Vec<Vec<String>> = proj
            .points
            .iter_rows()
            .zip(&ds.labels)
            .map(|(p, y)| vec![num(p[0]), num(p[1]), y.to_string()])
            .collect();
        let rel = format!("tsne/{}_{}.csv", slug(&proj.dataset), slug(&proj.model_id));
        w.write_csv(&rel, &["x", "y", "class_index"], &rows)?;
    }
    Ok(())
}

/// Paths whose current content no longer matches the manifest hash.
pub fn verify_bundle(bundle: &Path) -> Result<Vec<String>> {
    let manifest = BundleManifest::read(bundle)?;
    let mut bad = Vec::new();
    for a in &manifest.artifacts {
        match fs::read(bundle.join(&a.path)) {
            Ok(bytes) if sha256_hex(&bytes) == a.sha256 => {}
            _ => bad.push(a.path.clone()),
        }
    }
    Ok(bad)
}

/// Renders [`default_charts`] into `<bundle>/figures/` and returns the written paths.
pub fn render_figures(bundle: &Path) -> Result<Vec<PathBuf>> {
    let charts = default_charts(bundle)?;
    let dir = bundle.join("figures");
    fs::create_dir_all(&dir)?;
    let mut written = Vec::with_capacity(charts.len());
    for (name, spec) in charts {
        let svg = render_svg(&spec, bundle)?;
        let path = dir.join(format!("{name}.svg"));
        fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}
