//! `embrich` command line: run ablations, warm the embedding cache, render
//! figures from a bundle, validate configs and write synthetic fixtures.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use embrich::ablation::{run_ablation, AblationConfig, AblationError, AblationReport};
use embrich::data::{prepare, write_synthetic, DataError, DatasetConfig, SignalSource, SyntheticSpec};
use embrich::embeddings::{backend_for, embed_corpus, BackendKind, EmbeddingBackendDescriptor, EmbeddingCache};
use embrich::report::{emit_bundle, render_figures, verify_bundle};
use embrich::textualize::build_corpus;

pub const CACHE_ENV: &str = "EMBRICH_CACHE_DIR";

#[derive(Debug, Parser)]
#[command(name = "embrich", version, about = "Text-embedding feature enrichment ablations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full ablation from a run config and write a report bundle.
    Run(RunArgs),
    /// Serialize datasets to text and fill the embedding cache.
    Embed(EmbedArgs),
    /// Render SVG figures from an existing bundle.
    Report(ReportArgs),
    /// Check a run config or a dataset config without running anything.
    ValidateConfig(ValidateArgs),
    /// Write a synthetic dataset (CSV plus dataset config).
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendChoice {
    Hash,
    Remote,
}

#[derive(Debug, Args)]
struct BackendOverrides {
    /// Replace the kind of every configured embedding backend.
    #[arg(long, value_enum)]
    backend: Option<BackendChoice>,
    /// Endpoint for remote backends.
    #[arg(long)]
    endpoint: Option<String>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "embrich-results")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Also evaluate with dimensionality reduction fitted on training folds only.
    #[arg(long)]
    fold_safe: bool,
    #[command(flatten)]
    backends: BackendOverrides,
    /// Skip SVG rendering.
    #[arg(long)]
    no_figures: bool,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    /// Run config, or a dataset config combined with --model/--dim.
    #[arg(long)]
    config: PathBuf,
    /// Directory for the text corpora and the embedding summary.
    #[arg(long, default_value = "embrich-embeddings")]
    out: PathBuf,
    /// Model ids used with a dataset config.
    #[arg(long = "model", default_values_t = vec!["gpt2".to_string()])]
    models: Vec<String>,
    #[arg(long, default_value_t = 768)]
    dim: usize,
    /// Hash seed used with a dataset config.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    backends: BackendOverrides,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Bundle directory written by `run`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SignalChoice {
    Text,
    Numeric,
    Categorical,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "synthetic")]
    stem: String,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    numeric: usize,
    #[arg(long, default_value_t = 2)]
    categorical: usize,
    #[arg(long, value_enum, default_value_t = SignalChoice::Text)]
    signal: SignalChoice,
    /// Column index for numeric or categorical signals.
    #[arg(long, default_value_t = 0)]
    signal_column: usize,
    #[arg(long, default_value_t = 0.0)]
    label_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure classes that map to exit codes 1 and 2.
enum Failure {
    User(anyhow::Error),
    Internal(anyhow::Error),
}

type CliResult<T> = Result<T, Failure>;

trait UserContext<T> {
    fn user(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> UserContext<T> for Result<T, E> {
    fn user(self) -> CliResult<T> {
        self.map_err(|e| Failure::User(e.into()))
    }
}

fn internal<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Internal(e.into())
}

fn ablation_failure(e: AblationError) -> Failure {
    match e {
        AblationError::InvalidConfig(_) | AblationError::Data(_) => Failure::User(e.into()),
        other => Failure::Internal(other.into()),
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code: 0 success, 1 user error, 2 internal error.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Report(a) => cmd_report(a),
        Command::ValidateConfig(a) => cmd_validate(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::User(e)) => {
            eprintln!("error: {}", describe(&e));
            1
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {}", describe(&e));
            2
        }
    }
}

/// Error chain joined by `: `, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn open_cache(default_dir: &Path) -> CliResult<EmbeddingCache> {
    let dir = std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| default_dir.to_path_buf());
    EmbeddingCache::open_dir(&dir)
        .with_context(|| format!("opening embedding cache in {}", dir.display()))
        .user()
}

fn apply_backend_overrides(backends: &mut [EmbeddingBackendDescriptor], o: &BackendOverrides) -> CliResult<()> {
    for b in backends.iter_mut() {
        match o.backend {
            Some(BackendChoice::Hash) => {
                b.kind = BackendKind::DeterministicHash;
                b.endpoint = None;
            }
            Some(BackendChoice::Remote) => b.kind = BackendKind::RemoteService,
            None => {}
        }
        if b.kind == BackendKind::RemoteService {
            if let Some(e) = &o.endpoint {
                b.endpoint = Some(e.clone());
            }
            if b.endpoint.is_none() {
                return Err(Failure::User(anyhow!(
                    "backend {:?} is remote but no endpoint was given (use --endpoint)",
                    b.model_id
                )));
            }
        }
    }
    Ok(())
}

fn load_run_config(path: &Path) -> CliResult<AblationConfig> {
    AblationConfig::from_json_file(path)
        .with_context(|| format!("loading run config {}", path.display()))
        .user()
}

fn cmd_run(a: RunArgs) -> CliResult<()> {
    let mut config = load_run_config(&a.config)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    config.fold_safe |= a.fold_safe;
    apply_backend_overrides(&mut config.backends, &a.backends)?;
    config.validate().map_err(ablation_failure)?;

    fs::create_dir_all(&a.out)
        .with_context(|| format!("creating {}", a.out.display()))
        .user()?;
    let cache = open_cache(&a.out.join("cache"))?;
    let report = run_ablation(&config, &cache).map_err(ablation_failure)?;
    if report.protocols.iter().all(|p| p.cells.is_empty()) {
        let reasons: Vec<String> = report.primary().failures.iter().map(|f| format!("{}: {}", f.dataset, f.error)).collect();
        return Err(Failure::User(anyhow!("no cell could be evaluated\n{}", reasons.join("\n"))));
    }
    let manifest = emit_bundle(&report, &a.out).map_err(internal)?;
    let figures = if a.no_figures {
        0
    } else {
        render_figures(&a.out).map_err(internal)?.len()
    };
    print_summary(&report);
    println!(
        "bundle: {} ({} files, {} figures, {} failed cells)",
        a.out.display(),
        manifest.artifacts.len(),
        figures,
        manifest.failures.len()
    );
    Ok(())
}

fn print_summary(report: &AblationReport) {
    let primary = report.primary();
    println!("dataset\tclassifier\tsubset\twidth\taccuracy\tbalanced_accuracy\tweighted_f1\troc_auc");
    for c in &primary.cells {
        println!(
            "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            c.dataset,
            c.classifier,
            c.subset,
            c.width,
            c.mean.accuracy,
            c.mean.balanced_accuracy,
            c.mean.weighted_f1,
            c.mean.roc_auc
        );
    }
}

/// A config file is either a run config (has `datasets`) or a single dataset config.
enum ConfigDoc {
    Run(AblationConfig),
    Dataset(DatasetConfig),
}

fn load_any_config(path: &Path) -> CliResult<ConfigDoc> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .user()?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("{} is not valid JSON", path.display()))
        .user()?;
    if value.get("datasets").is_some() {
        load_run_config(path).map(ConfigDoc::Run)
    } else {
        DatasetConfig::from_json_file(path)
            .map(ConfigDoc::Dataset)
            .with_context(|| format!("loading dataset config {}", path.display()))
            .user()
    }
}

fn cmd_validate(a: ValidateArgs) -> CliResult<()> {
    match load_any_config(&a.config)? {
        ConfigDoc::Run(cfg) => println!(
            "ok: run config with {} dataset(s), {} backend(s), {} classifier(s)",
            cfg.datasets.len(),
            cfg.backends.len(),
            cfg.classifiers.len()
        ),
        ConfigDoc::Dataset(cfg) => println!(
            "ok: dataset config {:?} with {} column(s), target {:?}",
            cfg.dataset_id(),
            cfg.columns.len(),
            cfg.target_column
        ),
    }
    Ok(())
}

fn cmd_embed(a: EmbedArgs) -> CliResult<()> {
    let (datasets, mut backends) = match load_any_config(&a.config)? {
        ConfigDoc::Run(cfg) => (cfg.datasets, cfg.backends),
        ConfigDoc::Dataset(cfg) => {
            let backends = a
                .models
                .iter()
                .map(|m| EmbeddingBackendDescriptor::hash(m.clone(), a.dim, a.seed))
                .collect();
            (vec![cfg], backends)
        }
    };
    apply_backend_overrides(&mut backends, &a.backends)?;
    let built = backends
        .iter()
        .map(backend_for)
        .collect::<Result<Vec<_>, _>>()
        .user()?;

    fs::create_dir_all(&a.out)
        .with_context(|| format!("creating {}", a.out.display()))
        .user()?;
    let cache = open_cache(&a.out.join("cache"))?;
    let mut summary = Vec::new();
    for ds in &datasets {
        let prepared = prepare(ds).map_err(|e| match e {
            DataError::Io(_) | DataError::Csv(_) => internal(e),
            other => Failure::User(other.into()),
        })?;
        let corpus = build_corpus(&prepared.dataset);
        let corpus_path = a.out.join(format!("{}.corpus.jsonl", ds.dataset_id()));
        let mut file = std::io::BufWriter::new(fs::File::create(&corpus_path).map_err(internal)?);
        corpus.write_jsonl(&mut file).map_err(internal)?;
        file.flush().map_err(internal)?;
        for backend in &built {
            let m = embed_corpus(backend.as_ref(), &corpus, &cache)
                .with_context(|| format!("embedding {} with {}", ds.dataset_id(), backend.descriptor().model_id))
                .map_err(internal)?;
            println!(
                "{}\t{}\t{} x {}\t{}",
                ds.dataset_id(),
                backend.descriptor().model_id,
                m.values.rows(),
                m.values.cols(),
                m.corpus_fingerprint
            );
            summary.push(serde_json::json!({
                "dataset": ds.dataset_id(),
                "model": backend.descriptor().model_id,
                "cache_model_id": backend.descriptor().cache_model_id(),
                "rows": m.values.rows(),
                "dim": m.values.cols(),
                "corpus_fingerprint": m.corpus_fingerprint,
                "corpus": corpus_path.file_name().map(|n| n.to_string_lossy().into_owned()),
            }));
        }
    }
    let text = serde_json::to_string_pretty(&summary).map_err(internal)?;
    fs::write(a.out.join("embeddings.json"), text + "\n").map_err(internal)?;
    if let Some(path) = cache.path() {
        println!("cache: {} ({} entries)", path.display(), cache.len());
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> CliResult<()> {
    let stale = verify_bundle(&a.out)
        .with_context(|| format!("reading bundle {}", a.out.display()))
        .user()?;
    if !stale.is_empty() {
        return Err(Failure::User(anyhow!(
            "bundle files changed since they were written: {}",
            stale.join(", ")
        )));
    }
    let figures = render_figures(&a.out).map_err(internal)?;
    println!("wrote {} figures to {}", figures.len(), a.out.join("figures").display());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let signal = match a.signal {
        SignalChoice::Text => SignalSource::TextOnly,
        SignalChoice::Numeric => SignalSource::Numeric(a.signal_column),
        SignalChoice::Categorical => SignalSource::Categorical(a.signal_column),
    };
    let spec = SyntheticSpec {
        n: a.n,
        numeric_count: a.numeric,
        categorical_count: a.categorical,
        signal,
        label_noise: a.label_noise,
        noise_seed: a.seed,
    };
    if a.stem.is_empty() {
        return Err(Failure::User(anyhow!("--stem must not be empty")));
    }
    let cfg = write_synthetic(&spec, &a.out, &a.stem).user()?;
    println!("{}", spec.formula());
    println!(
        "wrote {} and {}",
        cfg.path.display(),
        a.out.join(format!("{}.json", a.stem)).display()
    );
    Ok(())
}
