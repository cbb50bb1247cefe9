//! Dataset ingestion and preprocessing.
//!
//! A dataset is described by an explicit JSON config (no schema inference).
//! The preprocessing chain is `load → stratified_sample → impute_missing →
//! encode_and_scale / encode_target`, each step a pure function of its input.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

/// Target cells equal to one of these (after trimming) count as missing.
pub const TARGET_MISSING_MARKERS: &[&str] = &["", "?", "NA", "NaN"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("schema mismatch: missing columns {missing:?}, unexpected columns {extra:?}")]
    SchemaMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("cannot parse {value:?} as a number (row {row}, column {column})")]
    ParseError {
        row: usize,
        column: String,
        value: String,
    },
    #[error("column {0} has no observed values")]
    AllMissingColumn(String),
    #[error("positive label {0:?} does not occur in the target column")]
    UnknownPositiveLabel(String),
    #[error("binary task but the target has {0} distinct labels")]
    MoreThanTwoClasses(usize),
    #[error("target column has a single class {0:?}")]
    SingleClass(String),
    #[error("no rows left after dropping missing targets")]
    EmptyDataset,
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

fn default_missing_markers() -> Vec<String> {
    vec![String::new(), "?".into(), "NA".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default = "default_missing_markers")]
    pub missing_markers: Vec<String>,
}

impl ColumnSchema {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numeric,
            missing_markers: default_missing_markers(),
        }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            missing_markers: default_missing_markers(),
        }
    }

    fn is_missing(&self, raw: &str) -> bool {
        self.missing_markers.iter().any(|m| m.trim() == raw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Binary,
    Multiclass,
}

fn default_fraction() -> f64 {
    1.0
}

/// One dataset's JSON config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub target_column: String,
    pub task: Task,
    #[serde(default)]
    pub positive_label: Option<String>,
    pub columns: Vec<ColumnSchema>,
    /// Columns that are serialized to text but kept out of the baseline matrix.
    #[serde(default)]
    pub text_only_columns: Vec<String>,
    #[serde(default = "default_fraction")]
    pub sample_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => DataError::FileNotFound(path.to_path_buf()),
            _ => DataError::Io(e),
        })?;
        let mut cfg: DatasetConfig = serde_json::from_str(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_relative_to(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes a relative `path` relative to `dir` (the config file's directory).
    pub fn resolve_relative_to(&mut self, dir: &Path) {
        if self.path.is_relative() {
            self.path = dir.join(&self.path);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(DataError::InvalidConfig(format!(
                    "duplicate column {:?}",
                    c.name
                )));
            }
        }
        if seen.contains(self.target_column.as_str()) {
            return Err(DataError::InvalidConfig(format!(
                "target_column {:?} is also listed as a feature column",
                self.target_column
            )));
        }
        for t in &self.text_only_columns {
            if !seen.contains(t.as_str()) {
                return Err(DataError::InvalidConfig(format!(
                    "text_only_columns entry {t:?} is not a declared column"
                )));
            }
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(DataError::InvalidConfig(format!(
                "sample_fraction must lie in (0, 1], got {}",
                self.sample_fraction
            )));
        }
        match (self.task, &self.positive_label) {
            (Task::Binary, None) => Err(DataError::InvalidConfig(
                "binary task requires positive_label".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Short identifier used in report file names: the data file stem.
    pub fn dataset_id(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    }

    fn is_text_only(&self, name: &str) -> bool {
        self.text_only_columns.iter().any(|c| c == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Missing,
    Number(f64),
    Text(String),
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub config: DatasetConfig,
    /// `n` rows, each holding one cell per schema column in schema order.
    pub rows: Vec<Vec<Cell>>,
    pub targets: Vec<String>,
}

impl TabularDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn schema(&self) -> &[ColumnSchema] {
        &self.config.columns
    }

    fn subset(&self, keep: &[usize]) -> TabularDataset {
        TabularDataset {
            config: self.config.clone(),
            rows: keep.iter().map(|&i| self.rows[i].clone()).collect(),
            targets: keep.iter().map(|&i| self.targets[i].clone()).collect(),
        }
    }
}

/// Reads the CSV named by `config.path`. Rows with a missing target are dropped.
pub fn load_dataset(config: &DatasetConfig) -> Result<TabularDataset> {
    config.validate()?;
    if !config.path.exists() {
        return Err(DataError::FileNotFound(config.path.clone()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&config.path)?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let mut position: HashMap<&str, usize> = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        position.insert(h.as_str(), i);
    }
    let expected: BTreeSet<&str> = config
        .columns
        .iter()
        .map(|c| c.name.as_str())
        .chain(std::iter::once(config.target_column.as_str()))
        .collect();
    let present: BTreeSet<&str> = headers.iter().map(String::as_str).collect();
    let missing: Vec<String> = expected
        .difference(&present)
        .map(|s| s.to_string())
        .collect();
    let extra: Vec<String> = present
        .difference(&expected)
        .map(|s| s.to_string())
        .collect();
    if !missing.is_empty() || !extra.is_empty() || present.len() != headers.len() {
        return Err(DataError::SchemaMismatch { missing, extra });
    }

    let target_pos = position[config.target_column.as_str()];
    let col_pos: Vec<usize> = config
        .columns
        .iter()
        .map(|c| position[c.name.as_str()])
        .collect();

    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let target = record.get(target_pos).unwrap_or("").trim();
        if TARGET_MISSING_MARKERS.contains(&target) {
            continue;
        }
        let mut cells = Vec::with_capacity(config.columns.len());
        for (schema, &pos) in config.columns.iter().zip(&col_pos) {
            let raw = record.get(pos).unwrap_or("").trim();
            let cell = if schema.is_missing(raw) {
                Cell::Missing
            } else {
                match schema.kind {
                    ColumnKind::Categorical => Cell::Text(raw.to_string()),
                    ColumnKind::Numeric => match raw.parse::<f64>() {
                        Ok(v) if v.is_finite() => Cell::Number(v),
                        _ => {
                            return Err(DataError::ParseError {
                                row: line + 1,
                                column: schema.name.clone(),
                                value: raw.to_string(),
                            })
                        }
                    },
                }
            };
            cells.push(cell);
        }
        rows.push(cells);
        targets.push(target.to_string());
    }
    if rows.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    Ok(TabularDataset {
        config: config.clone(),
        rows,
        targets,
    })
}

/// Keeps `round(fraction × class count)` rows per class (at least one), chosen by a
/// seeded shuffle within each class. Surviving rows keep their original relative order.
pub fn stratified_sample(ds: &TabularDataset, fraction: f64, seed: u64) -> Result<TabularDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::InvalidConfig(format!(
            "sample fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if fraction == 1.0 {
        return Ok(ds.clone());
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in ds.targets.iter().enumerate() {
        by_class.entry(t.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for members in by_class.values() {
        let want = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len());
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        keep.extend_from_slice(&shuffled[..want]);
    }
    keep.sort_unstable();
    Ok(ds.subset(&keep))
}

/// Fills categorical gaps with the column mode (ties go to the lexicographically
/// smallest value) and numeric gaps with the observed mean.
pub fn impute_missing(ds: &TabularDataset) -> Result<TabularDataset> {
    let mut out = ds.clone();
    for (c, schema) in ds.config.columns.iter().enumerate() {
        if !ds.rows.iter().any(|r| r[c].is_missing()) {
            continue;
        }
        let fill = match schema.kind {
            ColumnKind::Numeric => {
                let observed: Vec<f64> = ds
                    .rows
                    .iter()
                    .filter_map(|r| match r[c] {
                        Cell::Number(v) => Some(v),
                        _ => None,
                    })
                    .collect();
                if observed.is_empty() {
                    return Err(DataError::AllMissingColumn(schema.name.clone()));
                }
                Cell::Number(observed.iter().sum::<f64>() / observed.len() as f64)
            }
            ColumnKind::Categorical => {
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for r in &ds.rows {
                    if let Cell::Text(s) = &r[c] {
                        *counts.entry(s.as_str()).or_default() += 1;
                    }
                }
                // BTreeMap iterates in ascending key order, so the first maximum wins ties.
                let mode = counts
                    .iter()
                    .fold(None::<(&str, usize)>, |best, (&k, &n)| match best {
                        Some((_, bn)) if bn >= n => best,
                        _ => Some((k, n)),
                    })
                    .ok_or_else(|| DataError::AllMissingColumn(schema.name.clone()))?;
                Cell::Text(mode.0.to_string())
            }
        };
        for r in &mut out.rows {
            if r[c].is_missing() {
                r[c] = fill.clone();
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerEntry {
    pub column: String,
    pub mean: f64,
    pub std: f64,
}

/// Contiguous block of one-hot columns that came from a single categorical column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalGroup {
    pub column: String,
    pub start: usize,
    pub levels: Vec<String>,
}

impl CategoricalGroup {
    pub fn width(&self) -> usize {
        self.levels.len()
    }
}

/// Model-ready baseline matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub values: Matrix,
    pub scaler: Vec<ScalerEntry>,
    pub categorical_groups: Vec<CategoricalGroup>,
}

/// One-hot encodes categorical columns (all levels, sorted) and standardizes numeric
/// columns with the population standard deviation. Text-only columns are skipped.
pub fn encode_and_scale(ds: &TabularDataset) -> Result<FeatureMatrix> {
    let n = ds.len();
    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut scaler = Vec::new();
    let mut groups = Vec::new();

    for (c, schema) in ds.config.columns.iter().enumerate() {
        if ds.config.is_text_only(&schema.name) {
            continue;
        }
        match schema.kind {
            ColumnKind::Numeric => {
                let mut values = Vec::with_capacity(n);
                for r in &ds.rows {
                    match r[c] {
                        Cell::Number(v) => values.push(v),
                        _ => return Err(DataError::AllMissingColumn(schema.name.clone())),
                    }
                }
                let mean = values.iter().sum::<f64>() / n as f64;
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                let mut std = var.sqrt();
                // Constant (or numerically constant) columns collapse to zeros.
                if std.is_nan() || std <= 1e-12 * mean.abs().max(1.0) {
                    std = 1.0;
                    values.iter_mut().for_each(|v| *v = 0.0);
                } else {
                    values.iter_mut().for_each(|v| *v = (*v - mean) / std);
                }
                names.push(schema.name.clone());
                columns.push(values);
                scaler.push(ScalerEntry {
                    column: schema.name.clone(),
                    mean,
                    std,
                });
            }
            ColumnKind::Categorical => {
                let mut levels = BTreeSet::new();
                for r in &ds.rows {
                    match &r[c] {
                        Cell::Text(s) => {
                            levels.insert(s.clone());
                        }
                        _ => return Err(DataError::AllMissingColumn(schema.name.clone())),
                    }
                }
                let levels: Vec<String> = levels.into_iter().collect();
                groups.push(CategoricalGroup {
                    column: schema.name.clone(),
                    start: columns.len(),
                    levels: levels.clone(),
                });
                for level in &levels {
                    names.push(format!("{}={}", schema.name, level));
                    columns.push(
                        ds.rows
                            .iter()
                            .map(|r| match &r[c] {
                                Cell::Text(s) if s == level => 1.0,
                                _ => 0.0,
                            })
                            .collect(),
                    );
                }
            }
        }
    }

    let q = columns.len();
    let mut values = Matrix::zeros(n, q);
    for (j, col) in columns.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            values.set(i, j, *v);
        }
    }
    Ok(FeatureMatrix {
        names,
        values,
        scaler,
        categorical_groups: groups,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelVector {
    pub values: Vec<usize>,
    pub class_names: Vec<String>,
}

impl LabelVector {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &v in &self.values {
            counts[v] += 1;
        }
        counts
    }

    pub fn select(&self, indices: &[usize]) -> LabelVector {
        LabelVector {
            values: indices.iter().map(|&i| self.values[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }
}

/// Binary: positive label ↦ 1, everything else ↦ 0. Multiclass: index by sorted name.
pub fn encode_target(ds: &TabularDataset) -> Result<LabelVector> {
    let distinct: BTreeSet<&str> = ds.targets.iter().map(String::as_str).collect();
    match ds.config.task {
        Task::Binary => {
            let positive = ds.config.positive_label.as_deref().ok_or_else(|| {
                DataError::InvalidConfig("binary task requires positive_label".into())
            })?;
            if distinct.len() > 2 {
                return Err(DataError::MoreThanTwoClasses(distinct.len()));
            }
            if !distinct.contains(positive) {
                return Err(DataError::UnknownPositiveLabel(positive.to_string()));
            }
            let negative = distinct
                .iter()
                .find(|&&l| l != positive)
                .ok_or_else(|| DataError::SingleClass(positive.to_string()))?;
            Ok(LabelVector {
                values: ds
                    .targets
                    .iter()
                    .map(|t| usize::from(t == positive))
                    .collect(),
                class_names: vec![negative.to_string(), positive.to_string()],
            })
        }
        Task::Multiclass => {
            if distinct.len() < 2 {
                return Err(DataError::SingleClass(
                    distinct
                        .iter()
                        .next()
                        .copied()
                        .unwrap_or_default()
                        .to_string(),
                ));
            }
            let class_names: Vec<String> = distinct.iter().map(|s| s.to_string()).collect();
            let index: HashMap<&str, usize> =
                distinct.iter().enumerate().map(|(i, s)| (*s, i)).collect();
            Ok(LabelVector {
                values: ds.targets.iter().map(|t| index[t.as_str()]).collect(),
                class_names,
            })
        }
    }
}

/// Output of the full preprocessing chain for one dataset.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    /// Sampled and imputed rows in original units (input to textualization).
    pub dataset: TabularDataset,
    pub baseline: FeatureMatrix,
    pub labels: LabelVector,
}

/// `load → sample (when sample_fraction < 1) → impute → encode`.
pub fn prepare(config: &DatasetConfig) -> Result<PreparedDataset> {
    let raw = load_dataset(config)?;
    let sampled = stratified_sample(&raw, config.sample_fraction, config.seed)?;
    prepare_loaded(&sampled)
}

pub fn prepare_loaded(ds: &TabularDataset) -> Result<PreparedDataset> {
    let dataset = impute_missing(ds)?;
    let baseline = encode_and_scale(&dataset)?;
    let labels = encode_target(&dataset)?;
    Ok(PreparedDataset {
        dataset,
        baseline,
        labels,
    })
}

/// Writes a dataset back out as CSV (schema columns then the target column).
pub fn write_csv(ds: &TabularDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = ds.config.columns.iter().map(|c| c.name.as_str()).collect();
    header.push(&ds.config.target_column);
    w.write_record(&header)?;
    for (row, target) in ds.rows.iter().zip(&ds.targets) {
        let mut rec: Vec<String> = row
            .iter()
            .map(|c| match c {
                Cell::Missing => String::new(),
                Cell::Number(v) => crate::textualize::render_number(*v),
                Cell::Text(s) => s.clone(),
            })
            .collect();
        rec.push(target.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Which column carries the label signal in a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum SignalSource {
    /// `y = 1{num_i > 0}`.
    Numeric(usize),
    /// `y = 1{cat_i ∈ first half of its levels}`.
    Categorical(usize),
    /// `y = 1{note = "approved"}`, where `note` is text-only.
    TextOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub numeric_count: usize,
    pub categorical_count: usize,
    pub signal: SignalSource,
    /// Probability of flipping each label after it is computed.
    #[serde(default)]
    pub label_noise: f64,
    pub noise_seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub dataset: TabularDataset,
    /// Human-readable generative formula.
    pub formula: String,
}

const SYNTH_LEVELS: &[&str] = &["amber", "cobalt", "crimson", "olive"];
const SYNTH_NOTES: [&str; 2] = ["declined", "approved"];

impl SyntheticSpec {
    pub fn formula(&self) -> String {
        let signal = match self.signal {
            SignalSource::Numeric(i) => format!("y = 1{{num_{i} > 0}}"),
            SignalSource::Categorical(i) => format!(
                "y = 1{{cat_{i} in {{{}, {}}}}}",
                SYNTH_LEVELS[0], SYNTH_LEVELS[1]
            ),
            SignalSource::TextOnly => "y = 1{note = approved}; note is text-only".to_string(),
        };
        format!(
            "n = {}; num_j ~ N(0,1) rounded to 2 decimals (j < {}); cat_j ~ Uniform{:?} (j < {}); \
             note ~ Uniform{:?}; {}; each label flipped with probability {}; rng = ChaCha8(seed {})",
            self.n,
            self.numeric_count,
            SYNTH_LEVELS,
            self.categorical_count,
            SYNTH_NOTES,
            signal,
            self.label_noise,
            self.noise_seed
        )
    }
}

/// Deterministic fixture generator.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    if spec.n < 20 {
        return Err(DataError::InvalidSpec(format!(
            "n must be at least 20, got {}",
            spec.n
        )));
    }
    if !(0.0..=0.5).contains(&spec.label_noise) {
        return Err(DataError::InvalidSpec(
            "label_noise must lie in [0, 0.5]".into(),
        ));
    }
    match spec.signal {
        SignalSource::Numeric(i) if i >= spec.numeric_count => {
            return Err(DataError::InvalidSpec(format!("no numeric column {i}")))
        }
        SignalSource::Categorical(i) if i >= spec.categorical_count => {
            return Err(DataError::InvalidSpec(format!("no categorical column {i}")))
        }
        _ => {}
    }

    let mut columns: Vec<ColumnSchema> = (0..spec.numeric_count)
        .map(|j| ColumnSchema::numeric(format!("num_{j}")))
        .collect();
    columns
        .extend((0..spec.categorical_count).map(|j| ColumnSchema::categorical(format!("cat_{j}"))));
    let with_note = spec.signal == SignalSource::TextOnly;
    if with_note {
        columns.push(ColumnSchema::categorical("note"));
    }

    let normal = rand_distr::StandardNormal;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
    let mut rows = Vec::with_capacity(spec.n);
    let mut targets = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let mut row = Vec::with_capacity(columns.len());
        for _ in 0..spec.numeric_count {
            let v: f64 = rng.sample(normal);
            row.push(Cell::Number((v * 100.0).round() / 100.0));
        }
        for _ in 0..spec.categorical_count {
            let level = SYNTH_LEVELS[rng.random_range(0..SYNTH_LEVELS.len())];
            row.push(Cell::Text(level.to_string()));
        }
        let note = rng.random_range(0..2usize);
        if with_note {
            row.push(Cell::Text(SYNTH_NOTES[note].to_string()));
        }
        let mut label = match spec.signal {
            SignalSource::Numeric(i) => matches!(row[i], Cell::Number(v) if v > 0.0),
            SignalSource::Categorical(i) => match &row[spec.numeric_count + i] {
                Cell::Text(s) => s == SYNTH_LEVELS[0] || s == SYNTH_LEVELS[1],
                _ => false,
            },
            SignalSource::TextOnly => note == 1,
        };
        if rng.random::<f64>() < spec.label_noise {
            label = !label;
        }
        rows.push(row);
        targets.push(if label { "yes" } else { "no" }.to_string());
    }

    let config = DatasetConfig {
        path: PathBuf::from("synthetic.csv"),
        target_column: "label".into(),
        task: Task::Binary,
        positive_label: Some("yes".into()),
        columns,
        text_only_columns: if with_note {
            vec!["note".into()]
        } else {
            vec![]
        },
        sample_fraction: 1.0,
        seed: spec.noise_seed,
    };
    Ok(SyntheticDataset {
        dataset: TabularDataset {
            config,
            rows,
            targets,
        },
        formula: spec.formula(),
    })
}

/// Writes `<dir>/<stem>.csv` and `<dir>/<stem>.json` for a synthetic dataset and returns
/// the config (with `path` pointing at the CSV).
pub fn write_synthetic(spec: &SyntheticSpec, dir: &Path, stem: &str) -> Result<DatasetConfig> {
    let mut synth = generate_synthetic(spec)?;
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    synth.dataset.config.path = csv_path.clone();
    write_csv(&synth.dataset, &csv_path)?;
    let mut on_disk = synth.dataset.config.clone();
    on_disk.path = PathBuf::from(format!("{stem}.csv"));
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&on_disk)? + "\n",
    )?;
    Ok(synth.dataset.config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn config_for(
        path: &Path,
        columns: Vec<ColumnSchema>,
        task: Task,
        positive: Option<&str>,
    ) -> DatasetConfig {
        DatasetConfig {
            path: path.to_path_buf(),
            target_column: "y".into(),
            task,
            positive_label: positive.map(String::from),
            columns,
            text_only_columns: vec![],
            sample_fraction: 1.0,
            seed: 0,
        }
    }

    fn write_file(dir: &tempfile::TempDir, body: &str) -> PathBuf {
        let path = dir.path().join("d.csv");
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    fn in_memory(
        columns: Vec<ColumnSchema>,
        rows: Vec<Vec<Cell>>,
        targets: &[&str],
    ) -> TabularDataset {
        TabularDataset {
            config: config_for(Path::new("mem.csv"), columns, Task::Multiclass, None),
            rows,
            targets: targets.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn load_drops_missing_targets() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "a,y\n1,yes\n2,\n3,no\n");
        let cfg = config_for(
            &path,
            vec![ColumnSchema::numeric("a")],
            Task::Binary,
            Some("yes"),
        );
        let ds = load_dataset(&cfg).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.targets, vec!["yes", "no"]);
    }

    #[test]
    fn load_header_order_insensitive_and_markers() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "y,c,a\nyes, x ,?\nno,?,2.5\n");
        let cfg = config_for(
            &path,
            vec![ColumnSchema::numeric("a"), ColumnSchema::categorical("c")],
            Task::Binary,
            Some("yes"),
        );
        let ds = load_dataset(&cfg).unwrap();
        assert_eq!(ds.rows[0], vec![Cell::Missing, Cell::Text("x".into())]);
        assert_eq!(ds.rows[1], vec![Cell::Number(2.5), Cell::Missing]);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "a,y\nabc,yes\n");
        let cfg = config_for(
            &path,
            vec![ColumnSchema::numeric("a")],
            Task::Binary,
            Some("yes"),
        );
        assert!(matches!(
            load_dataset(&cfg),
            Err(DataError::ParseError { row: 1, ref column, .. }) if column == "a"
        ));

        let path = write_file(&dir, "a,b,y\n1,2,yes\n");
        let cfg = config_for(
            &path,
            vec![ColumnSchema::numeric("a")],
            Task::Binary,
            Some("yes"),
        );
        match load_dataset(&cfg) {
            Err(DataError::SchemaMismatch { missing, extra }) => {
                assert!(missing.is_empty());
                assert_eq!(extra, vec!["b"]);
            }
            other => panic!("unexpected {other:?}"),
        }

        let cfg = config_for(
            &dir.path().join("nope.csv"),
            vec![],
            Task::Binary,
            Some("yes"),
        );
        assert!(matches!(
            load_dataset(&cfg),
            Err(DataError::FileNotFound(_))
        ));
    }

    #[test]
    fn stratified_sample_per_class_rounding() {
        let targets: Vec<&str> = (0..100).map(|i| if i < 70 { "a" } else { "b" }).collect();
        let ds = in_memory(
            vec![ColumnSchema::numeric("x")],
            (0..100).map(|i| vec![Cell::Number(i as f64)]).collect(),
            &targets,
        );
        let s = stratified_sample(&ds, 0.1, 7).unwrap();
        assert_eq!(s.targets.iter().filter(|t| *t == "a").count(), 7);
        assert_eq!(s.targets.iter().filter(|t| *t == "b").count(), 3);
        // original order is kept
        let xs: Vec<f64> = s
            .rows
            .iter()
            .map(|r| match r[0] {
                Cell::Number(v) => v,
                _ => unreachable!(),
            })
            .collect();
        assert!(xs.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s, stratified_sample(&ds, 0.1, 7).unwrap());
        assert_eq!(stratified_sample(&ds, 1.0, 3).unwrap(), ds);
        assert!(stratified_sample(&ds, 0.0, 3).is_err());
    }

    #[test]
    fn stratified_sample_keeps_one_per_class() {
        let ds = in_memory(
            vec![ColumnSchema::numeric("x")],
            (0..21).map(|i| vec![Cell::Number(i as f64)]).collect(),
            &[["a"; 20].as_slice(), &["b"]].concat(),
        );
        let s = stratified_sample(&ds, 0.05, 1).unwrap();
        assert_eq!(s.targets.iter().filter(|t| *t == "b").count(), 1);
        assert_eq!(s.targets.iter().filter(|t| *t == "a").count(), 1);
    }

    #[test]
    fn imputation_rules() {
        let t = |s: &str| Cell::Text(s.into());
        let ds = in_memory(
            vec![
                ColumnSchema::categorical("c"),
                ColumnSchema::numeric("x"),
                ColumnSchema::categorical("d"),
            ],
            vec![
                vec![t("a"), Cell::Number(1.0), t("b")],
                vec![t("a"), Cell::Missing, t("a")],
                vec![t("b"), Cell::Number(3.0), Cell::Missing],
                vec![Cell::Missing, Cell::Number(2.0), t("z")],
            ],
            &["p", "q", "p", "q"],
        );
        let out = impute_missing(&ds).unwrap();
        assert_eq!(out.rows[3][0], t("a"));
        assert_eq!(out.rows[1][1], Cell::Number(2.0));
        // three-way tie a/b/z resolves to "a"
        assert_eq!(out.rows[2][2], t("a"));
        assert_eq!(impute_missing(&out).unwrap(), out);

        let empty = in_memory(
            vec![ColumnSchema::numeric("x")],
            vec![vec![Cell::Missing], vec![Cell::Missing]],
            &["p", "q"],
        );
        assert!(matches!(impute_missing(&empty), Err(DataError::AllMissingColumn(c)) if c == "x"));
    }

    #[test]
    fn one_hot_and_scaling() {
        let t = |s: &str| Cell::Text(s.into());
        let ds = in_memory(
            vec![
                ColumnSchema::categorical("c"),
                ColumnSchema::numeric("x"),
                ColumnSchema::numeric("k"),
            ],
            vec![
                vec![t("a"), Cell::Number(1.0), Cell::Number(5.0)],
                vec![t("b"), Cell::Number(2.0), Cell::Number(5.0)],
                vec![t("a"), Cell::Number(3.0), Cell::Number(5.0)],
            ],
            &["p", "q", "p"],
        );
        let fm = encode_and_scale(&ds).unwrap();
        assert_eq!(fm.names, vec!["c=a", "c=b", "x", "k"]);
        assert_eq!(fm.values.column(0), vec![1.0, 0.0, 1.0]);
        assert_eq!(fm.values.column(1), vec![0.0, 1.0, 0.0]);
        let z = 1.224_744_871_391_589;
        let x = fm.values.column(2);
        assert!((x[0] + z).abs() < 1e-12 && x[1].abs() < 1e-12 && (x[2] - z).abs() < 1e-12);
        assert_eq!(fm.values.column(3), vec![0.0, 0.0, 0.0]);
        assert_eq!(fm.scaler[1].std, 1.0);
        assert_eq!(fm.categorical_groups[0].levels, vec!["a", "b"]);
    }

    #[test]
    fn text_only_columns_are_not_encoded() {
        let t = |s: &str| Cell::Text(s.into());
        let mut ds = in_memory(
            vec![
                ColumnSchema::numeric("x"),
                ColumnSchema::categorical("note"),
            ],
            vec![
                vec![Cell::Number(1.0), t("u")],
                vec![Cell::Number(2.0), t("v")],
            ],
            &["p", "q"],
        );
        ds.config.text_only_columns = vec!["note".into()];
        let fm = encode_and_scale(&ds).unwrap();
        assert_eq!(fm.names, vec!["x"]);
    }

    #[test]
    fn target_encoding() {
        let mut ds = in_memory(vec![], vec![vec![], vec![]], &[">50K", "<=50K"]);
        ds.config.task = Task::Binary;
        ds.config.positive_label = Some(">50K".into());
        let lv = encode_target(&ds).unwrap();
        assert_eq!(lv.values, vec![1, 0]);
        assert_eq!(lv.class_names, vec!["<=50K", ">50K"]);

        ds.config.positive_label = Some("nope".into());
        assert!(matches!(
            encode_target(&ds),
            Err(DataError::UnknownPositiveLabel(_))
        ));

        let mc = in_memory(vec![], vec![vec![]; 3], &["vgood", "acc", "unacc"]);
        let lv = encode_target(&mc).unwrap();
        assert_eq!(lv.values, vec![2, 0, 1]);

        let mut three = mc.clone();
        three.config.task = Task::Binary;
        three.config.positive_label = Some("acc".into());
        assert!(matches!(
            encode_target(&three),
            Err(DataError::MoreThanTwoClasses(3))
        ));
    }

    #[test]
    fn config_validation_and_json_keys() {
        let json = r#"{"path":"x.csv","target_column":"y","task":"binary","positive_label":"1",
            "columns":[{"name":"a","kind":"numeric","missing_markers":["?"]}],
            "text_only_columns":[],"sample_fraction":0.15,"seed":3}"#;
        let cfg: DatasetConfig = serde_json::from_str(json).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.sample_fraction, 0.15);

        let missing_target = r#"{"path":"x.csv","task":"binary","columns":[]}"#;
        let err = serde_json::from_str::<DatasetConfig>(missing_target).unwrap_err();
        assert!(err.to_string().contains("target_column"));

        let unknown =
            r#"{"path":"x.csv","target_column":"y","task":"multiclass","columns":[],"bogus":1}"#;
        assert!(serde_json::from_str::<DatasetConfig>(unknown).is_err());

        let mut bad = cfg.clone();
        bad.columns.push(ColumnSchema::numeric("y"));
        assert!(bad.validate().is_err());
        let mut bad = cfg;
        bad.sample_fraction = 1.5;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec {
            n: 50,
            numeric_count: 2,
            categorical_count: 1,
            signal: SignalSource::TextOnly,
            label_noise: 0.1,
            noise_seed: 9,
        };
        let dir = tempfile::tempdir().unwrap();
        write_synthetic(&spec, dir.path(), "a").unwrap();
        write_synthetic(&spec, dir.path(), "b").unwrap();
        assert_eq!(
            fs::read(dir.path().join("a.csv")).unwrap(),
            fs::read(dir.path().join("b.csv")).unwrap()
        );
        let cfg = DatasetConfig::from_json_file(&dir.path().join("a.json")).unwrap();
        let ds = load_dataset(&cfg).unwrap();
        assert_eq!(ds.len(), 50);
        assert_eq!(ds.config.text_only_columns, vec!["note"]);

        let tiny = SyntheticSpec { n: 10, ..spec };
        assert!(matches!(
            generate_synthetic(&tiny),
            Err(DataError::InvalidSpec(_))
        ));
    }
}
