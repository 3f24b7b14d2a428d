//! Command implementations behind the `rdr` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use rdr_core::amcv::log::{AnswerLog, LogWriter};
use rdr_core::amcv::{run_suite, Clock, OrchestratorConfig, ResolutionMode, SuiteError, SuiteStats};
use rdr_core::backend::{
    Backend, BackendConfig, Bounded, CachedBackend, HttpBackend, OracleBackend, ReplayCache, ReplayOnly, StubBackend,
    Transport, UreqTransport,
};
use rdr_core::dataset::{augment, load_manifest, synth_generate, AugmentedManifest, MANIFEST_FILE, SYNTH_MANIFEST_FILE};
use rdr_core::metrics::{ablation, MetricsReport};
use rdr_core::perturb::{IntensityTable, MAX_VIEWS, MIN_VIEWS};
use rdr_core::report::{
    ablation_table, efficiency_table, intensity_table, kind_table, performance_table, HeadlineRow, Table,
};

pub const VERSION: &str = concat!("rdr ", env!("CARGO_PKG_VERSION"));
pub const ANSWER_LOG_FILE: &str = "answers.jsonl";
pub const RUN_CONFIG_FILE: &str = "run.json";
pub const PROVENANCE_FILE: &str = "provenance.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "rdr", version, about = "Robustness evaluation for diagram question answering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic bar-chart question suite.
    Synth(SynthArgs),
    /// Render perturbed views for every question of a manifest.
    Perturb(PerturbArgs),
    /// Query a backend on every view and write the answer log.
    Eval(EvalArgs),
    /// Compute metrics from answer logs and render the result tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    /// Question manifest (JSON lines); image paths resolve against its directory.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub views: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON intensity table; defaults to the built-in one.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Oracle,
    Stub,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    #[value(name = "single_view")]
    SingleView,
    #[value(name = "majority_vote")]
    MajorityVote,
    #[value(name = "full_amcv")]
    FullAmcv,
}

impl From<ModeArg> for ResolutionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::SingleView => ResolutionMode::SingleView,
            ModeArg::MajorityVote => ResolutionMode::MajorityVote,
            ModeArg::FullAmcv => ResolutionMode::FullAmcv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClockArg {
    Wall,
    /// Record every duration as zero, for reproducible logs and reports.
    None,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory written by `perturb`.
    #[arg(long)]
    pub augmented: PathBuf,
    #[arg(long, value_enum)]
    pub backend: BackendKind,
    #[arg(long, value_enum, default_value = "full_amcv")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0.6)]
    pub tau: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Replay cache directory; required for `--backend replay`.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "wall")]
    pub clock: ClockArg,
    /// Questions evaluated concurrently.
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
    /// JSON backend config; the flags below override its fields.
    #[arg(long)]
    pub backend_config: Option<PathBuf>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    #[arg(long)]
    pub max_attempts: Option<u32>,
    /// Fixed reply of `--backend stub`.
    #[arg(long, default_value = "A")]
    pub stub_answer: String,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Answer log, optionally labelled: `PATH` or `PATH=LABEL`. Repeatable.
    #[arg(long = "log")]
    pub logs: Vec<String>,
    /// full_amcv log to re-resolve into the three ablation variants.
    #[arg(long)]
    pub ablation_from: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct Provenance<'a, T: Serialize> {
    version: &'a str,
    command: &'a str,
    config: T,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<String, CliError> {
    if a.count == 0 {
        return Err(CliError::Config("--count must be at least 1".into()));
    }
    let records = synth_generate(a.count, a.seed, &a.out).map_err(runtime)?;
    #[derive(Serialize)]
    struct Cfg {
        count: usize,
        seed: u64,
    }
    write_json(
        &a.out.join(PROVENANCE_FILE),
        &Provenance { version: VERSION, command: "synth", config: Cfg { count: a.count, seed: a.seed } },
    )?;
    Ok(format!("wrote {} questions to {}", records.len(), a.out.join(SYNTH_MANIFEST_FILE).display()))
}

pub fn cmd_perturb(a: &PerturbArgs) -> Result<String, CliError> {
    if !(MIN_VIEWS..=MAX_VIEWS).contains(&a.views) {
        return Err(CliError::Config(format!(
            "--views must lie in [{MIN_VIEWS}, {MAX_VIEWS}], got {}",
            a.views
        )));
    }
    let table = match &a.table {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<IntensityTable>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => IntensityTable::default(),
    };
    table.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let questions = load_manifest(&a.manifest).map_err(|e| CliError::Config(e.to_string()))?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let manifest = augment(&questions, base, a.seed, a.views, &table, &a.out).map_err(runtime)?;
    #[derive(Serialize)]
    struct Cfg<'a> {
        views: u32,
        seed: u64,
        table: &'a IntensityTable,
    }
    write_json(
        &a.out.join(PROVENANCE_FILE),
        &Provenance { version: VERSION, command: "perturb", config: Cfg { views: a.views, seed: a.seed, table: &table } },
    )?;
    let msg = format!(
        "wrote {} questions x {} views to {}",
        manifest.questions.len(),
        a.views,
        a.out.display()
    );
    if !manifest.failures.is_empty() {
        for f in &manifest.failures {
            eprintln!("augmentation failed for {}: {}", f.question_id, f.error);
        }
        return Err(runtime(format!("{msg}; {} questions failed", manifest.failures.len())));
    }
    Ok(msg)
}

/// Everything needed to replay an evaluation, written to `<out>/run.json`.
#[derive(Debug, Serialize)]
pub struct RunConfig {
    pub version: String,
    pub manifest: PathBuf,
    pub backend: BackendKind,
    pub backend_config: BackendConfig,
    pub orchestrator: OrchestratorConfig,
    pub intensity_table: IntensityTable,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub workers: usize,
}

fn backend_config(a: &EvalArgs) -> Result<BackendConfig, CliError> {
    let mut cfg = match &a.backend_config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => BackendConfig::default(),
    };
    if let Some(v) = &a.endpoint {
        cfg.endpoint_url = v.clone();
    }
    if let Some(v) = &a.model {
        cfg.model_name = v.clone();
    }
    if let Some(v) = &a.api_key_env {
        cfg.api_key_env_var = v.clone();
    }
    if let Some(v) = a.max_in_flight {
        cfg.max_in_flight = v;
    }
    if let Some(v) = a.timeout_ms {
        cfg.timeout_ms = v;
    }
    if let Some(v) = a.max_attempts {
        cfg.retry.max_attempts = v;
    }
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

/// Result of an evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub stats: SuiteStats,
    pub cache_hits: usize,
    pub cache_misses: usize,
    pub log_path: PathBuf,
}

pub fn cmd_eval(a: &EvalArgs) -> Result<EvalOutcome, CliError> {
    let cfg = backend_config(a)?;
    let transport = UreqTransport::new(Duration::from_millis(cfg.timeout_ms));
    eval_with_transport(a, transport)
}

/// `eval` with a caller-supplied HTTP transport (used by `--backend http`).
pub fn eval_with_transport<T: Transport + 'static>(a: &EvalArgs, transport: T) -> Result<EvalOutcome, CliError> {
    let bcfg = backend_config(a)?;
    let manifest_path = a.augmented.join(MANIFEST_FILE);
    let manifest = AugmentedManifest::load(&manifest_path).map_err(|e| CliError::Config(e.to_string()))?;
    let ocfg = OrchestratorConfig {
        tau: a.tau,
        n_views: manifest.n_views,
        resolution_mode: a.mode.into(),
        clock: match a.clock {
            ClockArg::Wall => Clock::Wall,
            ClockArg::None => Clock::Zero,
        },
        decode: bcfg.decode,
        ..Default::default()
    };
    ocfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if a.workers == 0 {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }

    let inner: Box<dyn Backend> = match a.backend {
        BackendKind::Http => {
            let key = std::env::var(&bcfg.api_key_env_var).ok().filter(|k| !k.is_empty());
            Box::new(HttpBackend::new(bcfg.clone(), transport, key))
        }
        BackendKind::Oracle => Box::new(OracleBackend::new()),
        BackendKind::Stub => Box::new(StubBackend::constant("stub", a.stub_answer.clone())),
        BackendKind::Replay => {
            if a.cache_dir.is_none() {
                return Err(CliError::Config("--backend replay requires --cache-dir".into()));
            }
            Box::new(ReplayOnly::new(bcfg.model_name.clone()))
        }
    };
    let bounded = Bounded::new(inner, bcfg.max_in_flight);

    create_dir(&a.out)?;
    let run_config = RunConfig {
        version: VERSION.to_string(),
        manifest: manifest_path.clone(),
        backend: a.backend,
        backend_config: bcfg.clone(),
        orchestrator: ocfg.clone(),
        intensity_table: manifest.table.clone(),
        master_seed: manifest.master_seed,
        out_dir: a.out.clone(),
        cache_dir: a.cache_dir.clone(),
        workers: a.workers,
    };
    write_json(&a.out.join(RUN_CONFIG_FILE), &run_config)?;
    let log_path = a.out.join(ANSWER_LOG_FILE);
    let log = LogWriter::create(&log_path).map_err(runtime)?;
    let run = |b: &dyn Backend| -> Result<SuiteStats, CliError> {
        run_suite(&manifest, &a.augmented, b, &ocfg, &log, a.workers).map_err(|e| match e {
            SuiteError::Config(m) => CliError::Config(m),
            other => runtime(other),
        })
    };
    let (stats, cache_hits, cache_misses) = match &a.cache_dir {
        Some(dir) => {
            let cache = ReplayCache::open(dir).map_err(|e| CliError::Config(e.to_string()))?;
            let cached = CachedBackend::new(bounded, cache);
            let stats = run(&cached)?;
            (stats, cached.hits(), cached.misses())
        }
        None => (run(&bounded)?, 0, 0),
    };
    if stats.failed > 0 || stats.skipped > 0 {
        return Err(runtime(format!(
            "{} questions failed at the backend, {} skipped; see {}",
            stats.failed,
            stats.skipped,
            log_path.display()
        )));
    }
    Ok(EvalOutcome {
        stats,
        cache_hits,
        cache_misses,
        log_path,
    })
}

/// Splits `PATH=LABEL`; a bare path gets no label.
fn parse_log_arg(arg: &str) -> (PathBuf, Option<String>) {
    match arg.rsplit_once('=') {
        Some((path, label)) if !label.is_empty() && !label.contains(['/', '\\']) => {
            (PathBuf::from(path), Some(label.to_string()))
        }
        _ => (PathBuf::from(arg), None),
    }
}

#[derive(Serialize)]
struct LabelledReport<'a> {
    label: &'a str,
    #[serde(flatten)]
    report: &'a MetricsReport,
}

fn load_report(path: &Path) -> Result<(AnswerLog, MetricsReport), CliError> {
    let log = AnswerLog::load(path).map_err(runtime)?;
    let report = MetricsReport::for_log(&log).map_err(runtime)?;
    Ok((log, report))
}

/// Writes every table to `<out>/tableN_*.{md,csv,tex}`, plus `report.md`
/// with all Markdown tables and `metrics.json`. Returns the table stems.
pub fn cmd_report(a: &ReportArgs) -> Result<Vec<String>, CliError> {
    if a.logs.is_empty() && a.ablation_from.is_none() {
        return Err(CliError::Config("give at least one --log or --ablation-from".into()));
    }
    let mut columns: Vec<(String, MetricsReport)> = Vec::new();
    for arg in &a.logs {
        let (path, label) = parse_log_arg(arg);
        let (_, report) = load_report(&path)?;
        columns.push((label.unwrap_or_else(|| report.model_name.clone()), report));
    }
    let variants = match &a.ablation_from {
        Some(path) => {
            let log = AnswerLog::load(path).map_err(runtime)?;
            Some(ablation(&log).map_err(runtime)?)
        }
        None => {
            // One log per resolution mode composes an ablation directly.
            let pick = |m: ResolutionMode| {
                let hits: Vec<&MetricsReport> = columns.iter().map(|c| &c.1).filter(|r| r.resolution_mode == m).collect();
                (hits.len() == 1).then(|| hits[0].clone())
            };
            match (
                pick(ResolutionMode::SingleView),
                pick(ResolutionMode::MajorityVote),
                pick(ResolutionMode::FullAmcv),
            ) {
                (Some(s), Some(m), Some(f)) if columns.len() == 3 => Some([s, m, f]),
                _ => None,
            }
        }
    };

    let mut tables: Vec<(&str, Table)> = Vec::new();
    if !columns.is_empty() {
        let rows: Vec<HeadlineRow> = columns.iter().map(|(l, r)| HeadlineRow::from_report(l, r)).collect();
        tables.push(("table1_performance", performance_table(&rows)));
    }
    if let Some(v) = &variants {
        tables.push(("table2_ablation", ablation_table(&v[2].model_name, v)));
    }
    let faceted: Vec<(String, &MetricsReport)> = if columns.is_empty() {
        let v = variants.as_ref().expect("checked above");
        vec![("Single View".into(), &v[0]), ("Full AMCV".into(), &v[2])]
    } else {
        columns.iter().map(|(l, r)| (l.clone(), r)).collect()
    };
    tables.push(("table3_by_kind", kind_table(&faceted)));
    tables.push(("table4_by_intensity", intensity_table(&faceted)));
    tables.push(("table5_efficiency", efficiency_table(&faceted)));

    create_dir(&a.out)?;
    let mut combined = String::new();
    for (stem, t) in &tables {
        t.write(&a.out, stem).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
        combined.push_str(&format!("## {}\n\n{}\n", t.caption, t.to_markdown()));
    }
    fs::write(a.out.join("report.md"), combined).map_err(runtime)?;

    let mut metrics: Vec<LabelledReport> = faceted.iter().map(|(l, r)| LabelledReport { label: l, report: r }).collect();
    let variant_labels = ["ablation: single_view", "ablation: majority_vote", "ablation: full_amcv"];
    if let (Some(v), false) = (&variants, columns.is_empty()) {
        metrics.extend(variant_labels.iter().zip(v.iter()).map(|(l, r)| LabelledReport { label: l, report: r }));
    }
    write_json(&a.out.join("metrics.json"), &metrics)?;
    let labels: Vec<&str> = faceted.iter().map(|(l, _)| l.as_str()).collect();
    write_json(
        &a.out.join(PROVENANCE_FILE),
        &Provenance { version: VERSION, command: "report", config: labels },
    )?;
    Ok(tables.iter().map(|(s, _)| s.to_string()).collect())
}

/// Parses arguments, runs one command and returns the process exit code.
pub fn run(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Perturb(a) => cmd_perturb(a),
        Command::Eval(a) => cmd_eval(a).map(|o| {
            format!(
                "answered {}, corrections {}, calls {}, cache hits {}, misses {}; log at {}",
                o.stats.answered,
                o.stats.triggered,
                o.stats.total_calls,
                o.cache_hits,
                o.cache_misses,
                o.log_path.display()
            )
        }),
        Command::Report(a) => cmd_report(a).map(|stems| format!("wrote {} to {}", stems.join(", "), a.out.display())),
    };
    match result {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
