//! `cheapet` command line.
//!
//! Exit codes: 0 success, 1 validation error, 2 I/O or network error,
//! 64 usage error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cheapet_core::evaluation::ReportFormat;
use cheapet_core::{
    ActivationVector, EvalOptions, MdsaModel, PredictionRecord, SupervisorKind, TraceMode,
    calibrate_threshold, emit_report, fit_mdsa, load_trace, sweep_curve, system_accuracy,
    trust_score,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::GatewayConfig;
use crate::gateway::{ServeError, serve};
use crate::stub::{StubConfig, run_stub};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "cheapet",
    version,
    about = "Cost-aware routing between a local surrogate and a remote model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SupervisorArg {
    Sm,
    Mdsa,
}

impl From<SupervisorArg> for SupervisorKind {
    fn from(s: SupervisorArg) -> Self {
        match s {
            SupervisorArg::Sm => SupervisorKind::Sm,
            SupervisorArg::Mdsa => SupervisorKind::Mdsa,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Jsonl,
}

#[derive(Debug, Args)]
pub struct ScoredTrace {
    /// JSONL prediction trace.
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, value_enum, default_value = "sm")]
    pub supervisor: SupervisorArg,
    /// Fitted MDSA model (required with `--supervisor mdsa`).
    #[arg(long)]
    pub mdsa_model: Option<PathBuf>,
    /// Repair mismatching stored local labels instead of failing.
    #[arg(long)]
    pub permissive: bool,
}

#[derive(Debug, Args)]
pub struct EvalFlags {
    /// Weight cost saving by each record's remote_cost_units.
    #[arg(long)]
    pub cost_weighted: bool,
    /// Accept records without remote_label; forwarding them counts as wrong.
    #[arg(long)]
    pub allow_missing_remote: bool,
}

impl From<&EvalFlags> for EvalOptions {
    fn from(f: &EvalFlags) -> Self {
        EvalOptions {
            cost_weighted: f.cost_weighted,
            allow_missing_remote: f.allow_missing_remote,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an MDSA model from a trace's activations.
    FitMdsa {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fit one global distribution instead of one per class.
        #[arg(long)]
        global: bool,
        #[arg(long, default_value_t = cheapet_core::supervision::DEFAULT_LAMBDA_SCALE)]
        lambda_scale: f64,
        /// Group by the local model's predicted label instead of true_label.
        #[arg(long)]
        predicted_labels: bool,
        #[arg(long)]
        permissive: bool,
    },
    /// Print the threshold that forwards the requested fraction of a trace.
    Calibrate {
        #[command(flatten)]
        scored: ScoredTrace,
        #[arg(long)]
        target_forward: f64,
    },
    /// Print system accuracy, forward fraction and cost saving at one threshold.
    Evaluate {
        #[command(flatten)]
        scored: ScoredTrace,
        #[command(flatten)]
        flags: EvalFlags,
        #[arg(long, conflicts_with = "target_forward")]
        threshold: Option<f64>,
        /// Calibrate the threshold instead of passing one.
        #[arg(long)]
        target_forward: Option<f64>,
        /// Held-out trace to calibrate on (defaults to the evaluated trace).
        #[arg(long, requires = "target_forward")]
        calibration_trace: Option<PathBuf>,
    },
    /// Write the cost-accuracy curve over every routing partition.
    Sweep {
        #[command(flatten)]
        scored: ScoredTrace,
        #[command(flatten)]
        flags: EvalFlags,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
    /// Run the routing gateway.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the deterministic remote-model stub.
    StubRemote {
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 0.9)]
        accuracy: f64,
        #[arg(long, default_value_t = 0)]
        latency_ms: u64,
        #[arg(long, default_value_t = 0.0)]
        failure_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        num_classes: usize,
        /// Report a flat cost per request instead of a token count.
        #[arg(long)]
        cost_units: Option<f64>,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn validation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            message: message.into(),
        }
    }
}

impl From<cheapet_core::Error> for CliError {
    fn from(e: cheapet_core::Error) -> Self {
        if e.is_io() {
            CliError::io(e.to_string())
        } else {
            CliError::validation(e.to_string())
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn mode(permissive: bool) -> TraceMode {
    if permissive {
        TraceMode::Permissive
    } else {
        TraceMode::Strict
    }
}

fn load_mdsa(kind: SupervisorKind, path: Option<&Path>) -> Result<Option<MdsaModel>, CliError> {
    match (kind, path) {
        (SupervisorKind::Mdsa, Some(p)) => Ok(Some(MdsaModel::load(p)?)),
        (SupervisorKind::Mdsa, None) => Err(CliError::validation(
            "--supervisor mdsa requires --mdsa-model",
        )),
        (SupervisorKind::Sm, _) => Ok(None),
    }
}

fn score_trace(
    trace: &[PredictionRecord],
    kind: SupervisorKind,
    mdsa: Option<&MdsaModel>,
) -> Result<Vec<f64>, CliError> {
    trace
        .iter()
        .map(|r| trust_score(kind, r, mdsa).map(|s| s.value()))
        .collect::<Result<_, _>>()
        .map_err(CliError::from)
}

fn load_scored(args: &ScoredTrace) -> Result<(Vec<PredictionRecord>, Vec<f64>), CliError> {
    let kind = SupervisorKind::from(args.supervisor);
    let mdsa = load_mdsa(kind, args.mdsa_model.as_deref())?;
    let trace = load_trace(&args.trace, mode(args.permissive))?;
    let scores = score_trace(&trace, kind, mdsa.as_ref())?;
    Ok((trace, scores))
}

fn print_json(value: &serde_json::Value) {
    println!("{value}");
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::FitMdsa {
            trace,
            out,
            global,
            lambda_scale,
            predicted_labels,
            permissive,
        } => {
            let records = load_trace(&trace, mode(permissive))?;
            let mut activations = Vec::with_capacity(records.len());
            let mut labels = Vec::with_capacity(records.len());
            for r in &records {
                let a: &ActivationVector = r.activation.as_ref().ok_or_else(|| {
                    CliError::validation(format!("record {} has no activation", r.id))
                })?;
                activations.push(a.clone());
                if !global {
                    let label = if predicted_labels {
                        r.local_label
                    } else {
                        r.true_label.ok_or_else(|| {
                            CliError::validation(format!(
                                "record {} has no true_label (use --global or --predicted-labels)",
                                r.id
                            ))
                        })?
                    };
                    labels.push(label);
                }
            }
            let model = fit_mdsa(&activations, &labels, !global, lambda_scale)?;
            model.save(&out)?;
            print_json(&json!({
                "out": out,
                "classes": model.classes().map(|(k, s)| json!({"class": k.to_string(), "samples": s.samples, "lambda": s.lambda})).collect::<Vec<_>>(),
                "dim": model.dim(),
                "class_conditional": model.class_conditional(),
            }));
            Ok(())
        }
        Command::Calibrate {
            scored,
            target_forward,
        } => {
            let (_, scores) = load_scored(&scored)?;
            let c = calibrate_threshold(&scores, target_forward)?;
            print_json(&json!({
                "supervisor": SupervisorKind::from(scored.supervisor),
                "threshold": c.threshold,
                "target_forward_fraction": c.target_forward_fraction,
                "achieved_forward_fraction": c.achieved_forward_fraction,
                "forwarded": c.forwarded,
                "n": c.n,
            }));
            Ok(())
        }
        Command::Evaluate {
            scored,
            flags,
            threshold,
            target_forward,
            calibration_trace,
        } => {
            let (trace, scores) = load_scored(&scored)?;
            let (threshold, source) = match (threshold, target_forward, calibration_trace) {
                (Some(t), _, _) => (t, "given"),
                (None, Some(target), None) => (
                    calibrate_threshold(&scores, target)?.threshold,
                    "post_hoc_calibration",
                ),
                (None, Some(target), Some(path)) => {
                    let kind = SupervisorKind::from(scored.supervisor);
                    let mdsa = load_mdsa(kind, scored.mdsa_model.as_deref())?;
                    let held_out = load_trace(&path, mode(scored.permissive))?;
                    let held_scores = score_trace(&held_out, kind, mdsa.as_ref())?;
                    (
                        calibrate_threshold(&held_scores, target)?.threshold,
                        "held_out_calibration",
                    )
                }
                (None, None, _) => {
                    return Err(CliError::validation(
                        "evaluate needs --threshold or --target-forward",
                    ));
                }
            };
            let out = system_accuracy(&trace, &scores, threshold, (&flags).into())?;
            print_json(&json!({
                "accuracy": out.accuracy,
                "forward_fraction": out.forward_fraction,
                "cost_saving": out.cost_saving,
                "threshold": out.threshold,
                "n_local": out.n_local,
                "n_remote": out.n_remote,
                "threshold_source": source,
            }));
            Ok(())
        }
        Command::Sweep {
            scored,
            flags,
            out,
            format,
        } => {
            let (trace, scores) = load_scored(&scored)?;
            let trace_id = scored
                .trace
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let report = sweep_curve(
                &trace,
                &scores,
                scored.supervisor.into(),
                &trace_id,
                (&flags).into(),
            )?;
            let format = match format {
                FormatArg::Csv => ReportFormat::Csv,
                FormatArg::Jsonl => ReportFormat::Jsonl,
            };
            let file = File::create(&out)
                .map_err(|e| CliError::io(format!("cannot create {}: {e}", out.display())))?;
            let mut w = BufWriter::new(file);
            emit_report(&report, format, &mut w)
                .and_then(|_| w.flush())
                .map_err(|e| CliError::io(format!("cannot write {}: {e}", out.display())))?;
            print_json(&json!({
                "trace_id": report.trace_id,
                "supervisor": report.supervisor_kind,
                "mode": "post_hoc_sweep",
                "points": report.curve.len(),
                "local_only_accuracy": report.local_only_accuracy,
                "remote_only_accuracy": report.remote_only_accuracy,
                "min_fraction_matching_remote": report.min_fraction_matching_remote,
                "best_point": report.best_point,
            }));
            Ok(())
        }
        Command::Serve { config } => {
            let config = GatewayConfig::load(&config).map_err(|e| match e {
                crate::config::ConfigError::Io { .. } => CliError::io(e.to_string()),
                crate::config::ConfigError::Invalid(_) => CliError::validation(e.to_string()),
            })?;
            init_tracing();
            runtime()?.block_on(serve(config)).map_err(|e| match e {
                ServeError::Io(e) => CliError::io(e.to_string()),
                ServeError::Setup(crate::gateway::GatewayError::Core(e)) => e.into(),
                ServeError::Setup(e) => CliError::validation(e.to_string()),
            })
        }
        Command::StubRemote {
            port,
            host,
            accuracy,
            latency_ms,
            failure_rate,
            seed,
            num_classes,
            cost_units,
        } => {
            let config = StubConfig {
                accuracy,
                latency_ms,
                failure_rate,
                seed,
                num_classes,
                fail_first: 0,
                cost_units,
            };
            config.validate().map_err(CliError::validation)?;
            init_tracing();
            runtime()?.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port))
                    .await
                    .map_err(|e| CliError::io(format!("cannot bind {host}:{port}: {e}")))?;
                tracing::info!(addr = %listener.local_addr().map_err(|e| CliError::io(e.to_string()))?, "stub remote listening");
                run_stub(config, listener)
                    .await
                    .map_err(|e| CliError::io(e.to_string()))
            })
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Runtime::new().map_err(|e| CliError::io(e.to_string()))
}

fn init_tracing() {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .try_init();
}
