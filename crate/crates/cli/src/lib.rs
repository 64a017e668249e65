//! Command-line runner for e-prop experiments.

pub mod run;
pub mod settings;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use eprop_core::config::{SimMode, Variant};
use eprop_core::neuron::SurrogateKind;
use eprop_core::optim::OptimizerKind;
use eprop_core::EpropError;
use eprop_tasks::TaskError;
use serde_json::Value;
use thiserror::Error;

use crate::settings::{Experiment, Overrides};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] EpropError),

    #[error(transparent)]
    Task(#[from] TaskError),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),

    #[error("self-check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "eprop", version, about = "Train recurrent spiking networks with e-prop")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Regression onto a sum of sinusoids from a frozen input pattern.
    PatternGeneration(TrainArgs),
    /// Two-alternative evidence accumulation over a delay.
    EvidenceAccumulation(TrainArgs),
    /// Classification of N-MNIST event recordings.
    Nmnist(TrainArgs),
    /// Runtime of the ignore-and-fire workload across worker counts.
    Scaling(ScalingArgs),
    /// Run the oracle self-checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// time-driven or event-driven
    #[arg(long)]
    pub mode: Option<SimMode>,
    /// bsshslm2020 or eprop-plus
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// adam or gd
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    /// Learning rate (per simulation step).
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// piecewise-linear, exponential, fast-sigmoid or arctan
    #[arg(long)]
    pub surrogate: Option<SurrogateKind>,
    #[arg(long, default_value = "runs/latest")]
    pub output_dir: PathBuf,
    /// N-MNIST root (falls back to NMNIST_ROOT).
    #[arg(long)]
    pub dataset_path: Option<PathBuf>,
    /// TOML config or a manifest.json from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dump the spike raster of one evaluation sample after training.
    #[arg(long)]
    pub raster: bool,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct ScalingArgs {
    /// Comma-separated worker counts.
    #[arg(long, value_delimiter = ',')]
    pub workers: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub scale: Option<usize>,
    /// Simulated steps per run.
    #[arg(long)]
    pub steps: Option<u64>,
    /// strong or weak
    #[arg(long)]
    pub layout: Option<settings::Layout>,
    /// on, off or both
    #[arg(long)]
    pub plastic: Option<String>,
    #[arg(long, default_value = "runs/scaling")]
    pub output_dir: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the results as a manifest.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

fn file_value(path: &Option<PathBuf>) -> Result<Value, CliError> {
    match path {
        Some(p) => settings::load_config_file(p),
        None => Ok(Value::Object(Default::default())),
    }
}

fn train_cmd(exp: Experiment, a: TrainArgs, argv: &[String]) -> Result<(), CliError> {
    let file = file_value(&a.config)?;
    let flags = Overrides {
        mode: a.mode,
        variant: a.variant,
        seed: a.seed,
        iterations: a.iterations,
        batch_size: a.batch_size,
        optimizer: a.optimizer,
        learning_rate: a.learning_rate,
        surrogate: a.surrogate,
        dataset_path: a.dataset_path,
        record_raster: a.raster,
    };
    let partial = settings::resolve_partial(exp, file, flags)?;
    let outcome = run::run_training_experiment(exp, partial, &a.output_dir, argv, !a.quiet)?;
    println!("{}", serde_json::to_string(&outcome.summary())?);
    Ok(())
}

fn scaling_cmd(a: ScalingArgs, argv: &[String]) -> Result<(), CliError> {
    let mut file = file_value(&a.config)?;
    let mut patch = serde_json::Map::new();
    if let Some(s) = a.scale {
        patch.insert("scale".into(), s.into());
    }
    if let Some(s) = a.steps {
        patch.insert("steps".into(), s.into());
    }
    if let Some(l) = a.layout {
        patch.insert("layout".into(), serde_json::to_value(l)?);
    }
    if let Some(p) = a.plastic.as_deref() {
        let v = match p {
            "on" => vec![true],
            "off" => vec![false],
            "both" => vec![false, true],
            other => return Err(CliError::Usage(format!("--plastic expects on, off or both, not `{other}`"))),
        };
        patch.insert("plastic".into(), serde_json::to_value(v)?);
    }
    settings::merge(&mut file, &Value::Object(patch));
    let spec = settings::resolve_scaling(&file, a.seed, a.workers)?;
    let rows = run::run_scaling_experiment(&spec, &a.output_dir, argv)?;
    println!("workers,plastic,n_rec,runtime_s,real_time_factor,recurrent_rate_hz");
    for (r, _) in &rows {
        println!(
            "{},{},{},{:.3},{:.3},{:.4}",
            r.workers, r.plastic, r.n_rec, r.runtime_s, r.real_time_factor, r.recurrent_rate_hz
        );
    }
    Ok(())
}

fn verify_cmd(a: VerifyArgs, argv: &[String]) -> Result<(), CliError> {
    let results = run::run_verify(a.seed.unwrap_or(1), a.output_dir.as_ref(), argv)?;
    for r in &results {
        println!("{r}");
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(failed.join(", ")))
    }
}

/// Run a parsed invocation; `argv` is recorded in the manifest.
pub fn dispatch(cli: Cli, argv: &[String]) -> Result<(), CliError> {
    match cli.command {
        Command::PatternGeneration(a) => train_cmd(Experiment::PatternGeneration, a, argv),
        Command::EvidenceAccumulation(a) => train_cmd(Experiment::EvidenceAccumulation, a, argv),
        Command::Nmnist(a) => train_cmd(Experiment::Nmnist, a, argv),
        Command::Scaling(a) => scaling_cmd(a, argv),
        Command::Verify(a) => verify_cmd(a, argv),
    }
}
