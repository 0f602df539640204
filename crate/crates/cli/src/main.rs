mod commands;
mod config;
mod figures;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{RawConfig, RunConfig};

/// Failures, grouped by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit code 2.
    Config(String),
    /// Exit code 3.
    Numerical(String),
    /// Exit code 1.
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl From<w2dual_core::Error> for CliError {
    fn from(e: w2dual_core::Error) -> Self {
        use w2dual_core::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            E::Dimension(_) => CliError::Config(e.to_string()),
            E::Numerical(m) => CliError::Numerical(m),
            E::DegenerateMeasure(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(format!("io error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(format!("csv error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(format!("serialization error: {e}"))
    }
}

#[derive(Parser)]
#[command(name = "w2dual", version, about = "Train and inspect Wasserstein-2 dual potentials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train potentials and write metrics, checkpoints, a report and figures.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Time the line-search variants inside L-BFGS.
    BenchLinesearch(BenchArgs),
    /// Trace conjugate-solver convergence from amortized and zero starts.
    TraceConjugate(TraceArgs),
    /// Push-forward, interpolation and landscape figures from a checkpoint.
    ExportFigures(ExportArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML config with dotted sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set conjugate.tol=1e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 16384)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "runs/eval")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "2,8,32")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 1024)]
    batch: usize,
    #[arg(long, default_value_t = 3)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use a trained potential instead of random quadratics.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "runs/bench_linesearch")]
    out: PathBuf,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "lbfgs,adam")]
    solvers: Vec<String>,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "runs/trace_conjugate")]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    /// Landscape grid points per axis.
    #[arg(long, default_value_t = 201)]
    resolution: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "runs/figures")]
    out: PathBuf,
}

fn train_config(a: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut raw = match &a.config {
        Some(p) => RawConfig::from_file(p)?,
        None => RawConfig::default(),
    };
    let flag = |name: &str| format!("--{name}");
    if let Some(v) = &a.task {
        raw.set("task.name", toml::Value::String(v.clone()), flag("task"));
    }
    if let Some(v) = &a.loss {
        raw.set("amortization.loss", toml::Value::String(v.clone()), flag("loss"));
    }
    if let Some(v) = &a.solver {
        raw.set("conjugate.solver", toml::Value::String(v.clone()), flag("solver"));
    }
    if let Some(v) = a.trials {
        raw.set("run.trials", toml::Value::Integer(v as i64), flag("trials"));
    }
    if let Some(v) = a.seed {
        raw.set("run.seed", toml::Value::Integer(v as i64), flag("seed"));
    }
    if let Some(v) = a.iters {
        raw.set("train.n_iters", toml::Value::Integer(v as i64), flag("iters"));
    }
    if let Some(v) = &a.out {
        raw.set("run.out", toml::Value::String(v.to_string_lossy().into_owned()), flag("out"));
    }
    for s in &a.overrides {
        raw.set_override(s)?;
    }
    RunConfig::resolve(&raw)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => commands::train(&train_config(&a)?),
        Command::Eval(a) => commands::eval(&a.checkpoint, a.samples, a.seed, &config::rooted(&a.out)),
        Command::BenchLinesearch(a) => commands::bench_linesearch(&commands::BenchOptions {
            dims: a.dims,
            batch: a.batch,
            trials: a.trials,
            seed: a.seed,
            checkpoint: a.checkpoint,
            out: config::rooted(&a.out),
        }),
        Command::TraceConjugate(a) => {
            commands::trace_conjugate(&a.checkpoint, &a.solvers, a.batch, a.seed, &config::rooted(&a.out))
        }
        Command::ExportFigures(a) => {
            commands::export_figures(&a.checkpoint, a.samples, a.resolution, a.seed, &config::rooted(&a.out))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
