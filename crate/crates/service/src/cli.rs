//! The `tsad` command line.
//!
//! Exit codes: 0 on success, 1 when a retrain gate fails, 2 on usage or
//! input errors.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tsad_core::benchmark::{run_benchmark, Mode};
use tsad_core::corpus::{anomaly_ratio, gen_corpus, read_corpus, write_corpus, CorpusSpec};
use tsad_core::detectors::{detect, DetectionOutput};
use tsad_core::eval::{split_corpus, DEFAULT_DELAY};
use tsad_core::gbdt::GbdtConfig;
use tsad_core::io::read_series;
use tsad_core::selector::{
    load_bundle, retrain_pipeline, save_bundle, select_for_series, DetectorChoice, RetrainConfig,
    TrainConfig, DEFAULT_LATENCY_BUDGET_MS,
};
use tsad_core::tuning::{check_alpha, tune, TuningResult, DEFAULT_ALPHA};

use crate::api::{router, AppState, ServiceConfig};
use crate::state::ReselectionPolicy;
use crate::{ServiceError, API_SCHEMA_VERSION};

#[derive(Debug, Parser)]
#[command(
    name = "tsad",
    version,
    about = "Time-series anomaly detection with per-series detector selection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a selector bundle on a labeled corpus and gate it on a held-out split.
    Train(TrainArgs),
    /// Detect anomalies in one series.
    Detect(DetectArgs),
    /// Compare fixed-parameter detectors with the selector on a corpus.
    Eval(EvalArgs),
    /// Write a synthetic labeled corpus.
    GenCorpus(GenCorpusArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Seeds the train/test split and tree subsampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Bundle the new one must not fall behind on the held-out split.
    #[arg(long)]
    pub previous: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_LATENCY_BUDGET_MS)]
    pub latency_budget_ms: f64,
    #[arg(long)]
    pub trees: Option<usize>,
    /// Also write the gate report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Without a bundle the period heuristic picks the detector.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// CSV (`timestamp,value`) or JSON points.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ALPHA, value_parser = parse_alpha)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Table2,
    Table3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Table2)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_DELAY)]
    pub delay: usize,
    /// Feature window; defaults to the bundle's.
    #[arg(long)]
    pub window: Option<usize>,
    /// Evaluate only the held-out quarter of the split with this seed.
    #[arg(long)]
    pub holdout: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    /// JSON corpus spec; defaults apply to missing fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Journal and feedback exports; state is in memory when unset.
    #[arg(long, env = "AD_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Static files served under /ui.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ALPHA, value_parser = parse_alpha)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.25)]
    pub anomaly_rate_ceiling: f64,
    #[arg(long, default_value_t = 0.5)]
    pub false_alert_rate_ceiling: f64,
    #[arg(long, default_value_t = 500)]
    pub reselect_window: usize,
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let a: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    check_alpha(a).map_err(|e| e.to_string())?;
    Ok(a)
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] tsad_core::Error),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("{0}")]
    Other(String),
}

pub fn run(cli: Cli) -> ExitCode {
    let outcome = match cli.command {
        Command::Train(a) => train(&a),
        Command::Detect(a) => detect_cmd(&a).map(|()| true),
        Command::Eval(a) => eval(&a).map(|()| true),
        Command::GenCorpus(a) => gen(&a).map(|()| true),
        Command::Serve(a) => serve(a).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| ServiceError::io(path, e).into())
}

/// Returns whether the gate passed. The bundle is written either way and
/// carries its own `releasable` flag.
fn train(a: &TrainArgs) -> Result<bool, CliError> {
    let corpus = read_corpus(&a.corpus)?;
    let previous = a.previous.as_deref().map(load_bundle).transpose()?;
    let mut gbdt = GbdtConfig {
        seed: a.seed,
        ..GbdtConfig::default()
    };
    if let Some(n) = a.trees {
        gbdt.n_trees = n;
    }
    let cfg = RetrainConfig {
        train: TrainConfig {
            gbdt,
            ..TrainConfig::default()
        },
        split_seed: a.seed,
        latency_budget_ms: a.latency_budget_ms,
    };
    let out = retrain_pipeline(&corpus, previous.as_ref(), &cfg)?;
    save_bundle(&out.bundle, &a.out)?;
    let text =
        serde_json::to_string_pretty(&out.report).map_err(|e| CliError::Other(e.to_string()))?;
    if let Some(p) = &a.report {
        write_file(p, &text)?;
    }
    println!("{text}");
    Ok(out.report.passed)
}

#[derive(Serialize)]
struct DetectReport {
    schema_version: u32,
    alpha: f64,
    length: usize,
    choice: DetectorChoice,
    detection: DetectionOutput,
    tuning: TuningResult,
}

fn detect_cmd(a: &DetectArgs) -> Result<(), CliError> {
    let bundle = a.bundle.as_deref().map(load_bundle).transpose()?;
    let series = read_series(&a.input)?;
    let choice = select_for_series(bundle.as_ref(), &series);
    let detection = detect(&series, &choice.params())?;
    let tuning = tune(&series, &detection.labels, a.alpha)?;
    print_json(&DetectReport {
        schema_version: API_SCHEMA_VERSION,
        alpha: a.alpha,
        length: series.len(),
        choice,
        detection,
        tuning,
    })
}

fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let bundle = load_bundle(&a.bundle)?;
    let mut corpus = read_corpus(&a.corpus)?;
    if let Some(seed) = a.holdout {
        corpus = split_corpus(&corpus, seed)?.1;
    }
    let mode = match a.mode {
        ModeArg::Table2 => Mode::Table2,
        ModeArg::Table3 => Mode::Table3,
    };
    let report = run_benchmark(
        &corpus,
        &bundle,
        a.window.unwrap_or(bundle.window),
        a.delay,
        mode,
    )?;
    match a.format {
        Format::Text => print!("{}", report.to_text()),
        Format::Json => println!("{}", report.to_json()),
    }
    Ok(())
}

#[derive(Serialize)]
struct GenSummary {
    out: PathBuf,
    seed: u64,
    n_series: usize,
    anomaly_ratio: f64,
}

fn gen(a: &GenCorpusArgs) -> Result<(), CliError> {
    let spec: CorpusSpec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| ServiceError::io(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Other(format!("{}: {e}", p.display())))?
        }
        None => CorpusSpec::default(),
    };
    let corpus = gen_corpus(&spec, a.seed)?;
    write_corpus(&a.out, &corpus)?;
    print_json(&GenSummary {
        out: a.out.clone(),
        seed: a.seed,
        n_series: corpus.len(),
        anomaly_ratio: anomaly_ratio(&corpus),
    })
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let bundle = a.bundle.as_deref().map(load_bundle).transpose()?;
    let cfg = ServiceConfig {
        data_dir: a.data_dir,
        policy: ReselectionPolicy {
            anomaly_rate_ceiling: a.anomaly_rate_ceiling,
            false_alert_rate_ceiling: a.false_alert_rate_ceiling,
            window: a.reselect_window,
            ..ReselectionPolicy::default()
        },
        default_alpha: a.alpha,
        ui_dir: a.ui_dir,
    };
    let state = AppState::open(cfg, bundle)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Other(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.addr)
            .await
            .map_err(|e| CliError::Other(format!("bind {}: {e}", a.addr)))?;
        eprintln!(
            "tsad listening on http://{} ({} series restored)",
            a.addr,
            state.series_count()
        );
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Other(e.to_string()))
    })
}
