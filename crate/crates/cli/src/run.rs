//! Experiment runners: build, train or benchmark, and write outputs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use eprop_core::engine::io::{write_json, write_metrics_csv, write_raster_csv, write_weights_csv};
use eprop_core::engine::scaling::{run_scaling, ScalingNetwork, ScalingReport, ScalingRun};
use eprop_core::engine::training::{IterationMetrics, Phase, TaskStream, TrainingRun};
use eprop_core::verify::{self, CheckResult};
use eprop_core::{Network, RecordLevel};
use eprop_tasks::evidence::EvidenceStream;
use eprop_tasks::nmnist::{dataset_root, NmnistDataset, NmnistStream};
use eprop_tasks::pattern::PatternStream;
use eprop_tasks::scaling::gen_scaling_network;
use eprop_tasks::TaskError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::settings::{Experiment, Layout, PartialSpec, ScalingSpec, TaskConfig, TrainingSpec};
use crate::CliError;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub argv: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingSpec>,
    pub summary: Value,
}

impl Manifest {
    fn new(subcommand: &str, argv: &[String]) -> Self {
        Manifest {
            manifest_version: MANIFEST_VERSION,
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            argv: argv.to_vec(),
            training: None,
            scaling: None,
            summary: Value::Null,
        }
    }
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))
}

/// Task stream for a spec, plus the number of input channels it feeds.
pub fn open_stream(partial: &PartialSpec) -> Result<(Box<dyn TaskStream>, usize), CliError> {
    Ok(match &partial.task {
        TaskConfig::PatternGeneration(t) => (Box::new(PatternStream::new(partial.seed, t)?), t.n_in),
        TaskConfig::EvidenceAccumulation(t) => {
            (Box::new(EvidenceStream::new(partial.seed, t.clone())?), t.n_in())
        }
        TaskConfig::Nmnist(t) => {
            let root = dataset_root(partial.dataset_path.as_deref()).map_err(|e| match e {
                TaskError::MissingDataset(p) => CliError::Usage(format!(
                    "N-MNIST dataset not found at {} (pass --dataset-path or set NMNIST_ROOT)",
                    p.display()
                )),
                other => other.into(),
            })?;
            let data = NmnistDataset::load(&root, t)?;
            let n_in = data.n_in();
            (Box::new(NmnistStream::new(data, partial.seed)), n_in)
        }
    })
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub spec: TrainingSpec,
    pub run: TrainingRun,
    pub weight_checksum_before: u64,
    pub weight_checksum_after: u64,
}

impl TrainingOutcome {
    pub fn rows(&self, phase: Phase) -> impl Iterator<Item = &IterationMetrics> {
        self.run.metrics.iter().filter(move |m| m.phase == phase)
    }

    pub fn summary(&self) -> Value {
        let last_train = self.rows(Phase::Train).last();
        let last_test = self.rows(Phase::Test).last();
        json!({
            "iterations": self.spec.training.iterations,
            "final_train_loss": last_train.map(|m| m.loss),
            "final_train_error": last_train.and_then(|m| m.prediction_error),
            "final_test_loss": last_test.map(|m| m.loss),
            "final_test_error": last_test.and_then(|m| m.prediction_error),
            "simulated_steps": self.run.simulated_steps,
            "runtime_s": self.run.runtime_s,
            "real_time_factor": self.run.real_time_factor(self.spec.network.lif.dt),
            "weight_checksum_before": format!("{:016x}", self.weight_checksum_before),
            "weight_checksum_after": format!("{:016x}", self.weight_checksum_after),
        })
    }
}

/// Train in memory without writing anything.
pub fn train(
    partial: PartialSpec,
    on_row: impl FnMut(&IterationMetrics),
) -> Result<(TrainingOutcome, Network, Box<dyn TaskStream>), CliError> {
    let (mut stream, n_in) = open_stream(&partial)?;
    let spec = partial.complete(n_in)?;
    let mut net = Network::build(&spec.network)?;
    let before = net.weights()?.checksum();
    let run = net.run_training(stream.as_mut(), &spec.training, on_row)?;
    let after = net.weights()?.checksum();
    Ok((
        TrainingOutcome {
            spec,
            run,
            weight_checksum_before: before,
            weight_checksum_after: after,
        },
        net,
        stream,
    ))
}

/// Train and write `metrics.csv`, weight dumps, optional raster and the manifest.
pub fn run_training_experiment(
    exp: Experiment,
    partial: PartialSpec,
    out: &Path,
    argv: &[String],
    progress: bool,
) -> Result<TrainingOutcome, CliError> {
    prepare_dir(out)?;
    let (mut stream, n_in) = open_stream(&partial)?;
    let spec = partial.complete(n_in)?;
    let mut net = Network::build(&spec.network)?;
    let before = net.weights()?;
    write_weights_csv(&out.join("weights_before.csv"), &before)?;
    let every = (spec.training.iterations / 20).max(1);
    let run = net.run_training(stream.as_mut(), &spec.training, |m| {
        if progress && (m.iteration % every == 0 || m.phase == Phase::Test) {
            let err = m.prediction_error.map(|e| format!(" error {e:.3}")).unwrap_or_default();
            eprintln!("{:>5} {:<5} loss {:.5}{err}", m.iteration, format!("{:?}", m.phase).to_lowercase(), m.loss);
        }
    })?;
    write_metrics_csv(&out.join("metrics.csv"), &run.metrics)?;
    let after = net.weights()?;
    write_weights_csv(&out.join("weights_after.csv"), &after)?;
    if spec.record_raster {
        let batch = stream.test_batch(0, 1)?;
        net.set_record(RecordLevel::Raster);
        let start = net.now();
        let r = net.run_sample(&batch[0], false)?;
        let raster: Vec<(u32, i64)> = r.raster.iter().map(|&(n, t)| (n, t - start)).collect();
        write_raster_csv(&out.join("raster.csv"), &raster)?;
    }
    let outcome = TrainingOutcome {
        spec,
        run,
        weight_checksum_before: before.checksum(),
        weight_checksum_after: after.checksum(),
    };
    let mut manifest = Manifest::new(exp.name(), argv);
    manifest.training = Some(outcome.spec.clone());
    manifest.summary = outcome.summary();
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(outcome)
}

/// One benchmark row per (worker count, plasticity) pair.
pub fn run_scaling_benchmark(spec: &ScalingSpec) -> Result<Vec<(ScalingReport, usize)>, CliError> {
    let mut nets: HashMap<usize, ScalingNetwork> = HashMap::new();
    let mut rows = Vec::new();
    for &plastic in &spec.plastic {
        for &w in &spec.workers {
            let scale = match spec.layout {
                Layout::Strong => spec.scale,
                Layout::Weak => spec.scale * w,
            };
            if !nets.contains_key(&scale) {
                nets.insert(scale, gen_scaling_network(scale, spec.seed, &spec.network)?);
            }
            let run = ScalingRun {
                steps: spec.steps,
                workers: w,
                plastic,
                cutoff: spec.cutoff,
                record_spikes: spec.record_spikes,
            };
            let (report, _) = run_scaling(&nets[&scale], &run)?;
            rows.push((report, scale));
        }
    }
    Ok(rows)
}

/// Spike trains of runs on the same network must not depend on the worker count.
pub fn scaling_consistency(rows: &[(ScalingReport, usize)]) -> Vec<String> {
    let mut first: HashMap<usize, &ScalingReport> = HashMap::new();
    let mut problems = Vec::new();
    for (r, scale) in rows {
        match first.get(scale) {
            None => {
                first.insert(*scale, r);
            }
            Some(f) => {
                if f.spike_hash != r.spike_hash || f.spikes_recurrent != r.spikes_recurrent {
                    problems.push(format!(
                        "scale {scale}: spikes with {} workers differ from {} workers",
                        r.workers, f.workers
                    ));
                }
            }
        }
    }
    problems
}

pub fn run_scaling_experiment(spec: &ScalingSpec, out: &Path, argv: &[String]) -> Result<Vec<(ScalingReport, usize)>, CliError> {
    prepare_dir(out)?;
    let clock = Instant::now();
    let rows = run_scaling_benchmark(spec)?;
    let reports: Vec<&ScalingReport> = rows.iter().map(|(r, _)| r).collect();
    write_scaling_csv(&out.join("scaling.csv"), &reports)?;
    let problems = scaling_consistency(&rows);
    let mut manifest = Manifest::new("scaling", argv);
    manifest.scaling = Some(spec.clone());
    manifest.summary = json!({
        "runs": rows.len(),
        "total_runtime_s": clock.elapsed().as_secs_f64(),
        "consistency_problems": problems,
    });
    write_json(&out.join("manifest.json"), &manifest)?;
    if !problems.is_empty() {
        return Err(CliError::Check(problems.join("; ")));
    }
    Ok(rows)
}

pub fn run_verify(seed: u64, out: Option<&PathBuf>, argv: &[String]) -> Result<Vec<CheckResult>, CliError> {
    let results = verify::run_all(seed);
    if let Some(dir) = out {
        prepare_dir(dir)?;
        let mut manifest = Manifest::new("verify", argv);
        manifest.summary = json!({ "seed": seed, "checks": results });
        write_json(&dir.join("manifest.json"), &manifest)?;
    }
    Ok(results)
}

pub fn write_scaling_csv(path: &Path, rows: &[&ScalingReport]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(eprop_core::EpropError::from)?;
    for r in rows {
        w.serialize(r).map_err(eprop_core::EpropError::from)?;
    }
    w.flush().map_err(eprop_core::EpropError::from)?;
    Ok(())
}
