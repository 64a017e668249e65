//! Run specifications: shipped defaults, config files and flag overrides.
//!
//! A config file (TOML, or a JSON manifest written by an earlier run) may
//! set any subset of the resolved specification. Resolution order is
//! preset, then file, then explicit flags.

use std::path::{Path, PathBuf};

use eprop_core::config::{Connectivity, NetworkConfig, SimMode, Variant, WeightInit};
use eprop_core::engine::training::TrainingSchedule;
use eprop_core::neuron::{LifParams, SurrogateKind, SurrogateSpec};
use eprop_core::optim::{OptimizerConfig, OptimizerKind};
use eprop_core::plasticity::{RegMode, RegularizationParams};
use eprop_core::signals::LossKind;
use eprop_tasks::evidence::EvidenceTaskConfig;
use eprop_tasks::nmnist::NmnistConfig;
use eprop_tasks::pattern::PatternTaskConfig;
use eprop_tasks::scaling::ScalingTaskConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Which training experiment a spec describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    PatternGeneration,
    EvidenceAccumulation,
    Nmnist,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::PatternGeneration => "pattern-generation",
            Experiment::EvidenceAccumulation => "evidence-accumulation",
            Experiment::Nmnist => "nmnist",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "config", rename_all = "kebab-case")]
pub enum TaskConfig {
    PatternGeneration(PatternTaskConfig),
    EvidenceAccumulation(EvidenceTaskConfig),
    Nmnist(NmnistConfig),
}

/// Fully resolved training run; written verbatim into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSpec {
    pub experiment: Experiment,
    pub seed: u64,
    pub task: TaskConfig,
    pub network: NetworkConfig,
    pub training: TrainingSchedule,
    /// Dump the spike raster of one evaluation sample after training.
    pub record_raster: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// Fixed network, growing worker count.
    Strong,
    /// Network grows with the worker count.
    Weak,
}

impl std::str::FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strong" => Ok(Layout::Strong),
            "weak" => Ok(Layout::Weak),
            other => Err(format!("unknown layout `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingSpec {
    pub seed: u64,
    pub network: ScalingTaskConfig,
    pub scale: usize,
    pub layout: Layout,
    pub steps: u64,
    pub workers: Vec<usize>,
    /// Plasticity settings to run for every worker count.
    pub plastic: Vec<bool>,
    pub cutoff: u32,
    pub record_spikes: bool,
}

impl Default for ScalingSpec {
    fn default() -> Self {
        ScalingSpec {
            seed: 1,
            network: ScalingTaskConfig::default(),
            scale: 1,
            layout: Layout::Strong,
            steps: 20_000,
            workers: vec![1, 2, 4],
            plastic: vec![false, true],
            cutoff: 10,
            record_spikes: true,
        }
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<SimMode>,
    pub variant: Option<Variant>,
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub optimizer: Option<OptimizerKind>,
    pub learning_rate: Option<f64>,
    pub surrogate: Option<SurrogateKind>,
    pub dataset_path: Option<PathBuf>,
    pub record_raster: bool,
}

/// Recursively overlay `patch` onto `base`; objects merge, everything else replaces.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

fn overlay<T: Serialize + DeserializeOwned>(base: &T, patch: Option<&Value>, what: &str) -> Result<T, CliError> {
    let Some(patch) = patch else {
        return Ok(serde_json::from_value(serde_json::to_value(base)?)?);
    };
    let mut v = serde_json::to_value(base)?;
    merge(&mut v, patch);
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("invalid `{what}` settings: {e}")))
}

/// Read a TOML config or a JSON manifest. Manifests contribute the spec
/// they recorded.
pub fn load_config_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let value: Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
    };
    for key in ["training", "scaling"] {
        if value.get("manifest_version").is_some() {
            if let Some(inner) = value.get(key).filter(|v| !v.is_null()) {
                return Ok(inner.clone());
            }
        }
    }
    Ok(value)
}

/// Task parameters from the preset overlaid with the file.
pub fn resolve_task(exp: Experiment, file: &Value) -> Result<TaskConfig, CliError> {
    let patch = file.get("task").map(|t| t.get("config").unwrap_or(t));
    Ok(match exp {
        Experiment::PatternGeneration => TaskConfig::PatternGeneration(overlay(&pattern_task(), patch, "task")?),
        Experiment::EvidenceAccumulation => {
            TaskConfig::EvidenceAccumulation(overlay(&evidence_task(), patch, "task")?)
        }
        Experiment::Nmnist => TaskConfig::Nmnist(overlay(&NmnistConfig::default(), patch, "task")?),
    })
}

/// Everything except the network, which depends on the loaded task.
pub struct PartialSpec {
    pub experiment: Experiment,
    pub seed: u64,
    pub task: TaskConfig,
    pub variant: Variant,
    pub training: TrainingSchedule,
    pub record_raster: bool,
    pub dataset_path: Option<PathBuf>,
    file: Value,
    flags: Overrides,
}

pub fn resolve_partial(exp: Experiment, file: Value, flags: Overrides) -> Result<PartialSpec, CliError> {
    let seed = flags
        .seed
        .or_else(|| file.get("seed").and_then(Value::as_u64))
        .unwrap_or(1);
    let task = resolve_task(exp, &file)?;
    let variant = match flags.variant {
        Some(v) => v,
        None => match file.get("network").and_then(|n| n.get("variant")).or_else(|| file.get("variant")) {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::Usage(format!("variant: {e}")))?,
            None => Variant::Bsshslm2020,
        },
    };
    let mut training: TrainingSchedule = overlay(&schedule(exp), file.get("training"), "training")?;
    if let Some(n) = flags.iterations {
        training.iterations = n;
    }
    if let Some(b) = flags.batch_size {
        training.batch_size = b;
    }
    let record_raster = flags.record_raster || file.get("record_raster").and_then(Value::as_bool).unwrap_or(false);
    let dataset_path = flags.dataset_path.clone().or_else(|| {
        file.get("dataset_path")
            .and_then(Value::as_str)
            .map(PathBuf::from)
    });
    Ok(PartialSpec {
        experiment: exp,
        seed,
        task,
        variant,
        training,
        record_raster,
        dataset_path,
        file,
        flags,
    })
}

impl PartialSpec {
    /// Finish with the network for `n_in` input channels.
    pub fn complete(self, n_in: usize) -> Result<TrainingSpec, CliError> {
        let base = network_preset(&self.task, self.variant, self.seed, n_in)?;
        let mut net: NetworkConfig = overlay(&base, self.file.get("network"), "network")?;
        if self.flags.variant.is_some() {
            net = net.with_variant(self.variant)?;
        }
        net.seed = self.seed;
        net.n_in = n_in;
        if let Some(m) = self.flags.mode {
            net.mode = m;
        }
        if let Some(k) = self.flags.optimizer {
            net.optimizer.kind = k;
        }
        if let Some(eta) = self.flags.learning_rate {
            net.optimizer.eta = eta;
        }
        if let Some(kind) = self.flags.surrogate {
            for p in [&mut net.lif, &mut net.alif] {
                let s = SurrogateSpec::new(kind, p.surrogate.gamma, p.surrogate.beta)?;
                *p = LifParams::new(p.dt, p.tau_m, p.v_th, p.beta_a, p.tau_a, p.reset, s)?;
            }
        }
        net.policy.batch_size = self.training.batch_size;
        net.validate()?;
        Ok(TrainingSpec {
            experiment: self.experiment,
            seed: self.seed,
            task: self.task,
            network: net,
            training: self.training,
            record_raster: self.record_raster,
            dataset_path: self.dataset_path,
        })
    }
}

pub fn resolve_scaling(file: &Value, seed: Option<u64>, workers: Option<Vec<usize>>) -> Result<ScalingSpec, CliError> {
    let mut spec: ScalingSpec = overlay(&ScalingSpec::default(), Some(file), "scaling")?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(w) = workers {
        spec.workers = w;
    }
    if spec.workers.is_empty() || spec.workers.contains(&0) {
        return Err(CliError::Usage("worker counts must be positive".into()));
    }
    Ok(spec)
}

// Desk-scale presets. The paper does not list every hyperparameter; the
// shipped configs in `configs/` document which values are guesses.

pub fn pattern_task() -> PatternTaskConfig {
    PatternTaskConfig::default()
}

pub fn evidence_task() -> EvidenceTaskConfig {
    EvidenceTaskConfig {
        n_cues: 3,
        cue_duration: 50,
        inter_cue: 25,
        delay: 200,
        recall: 100,
        ..Default::default()
    }
}

pub fn schedule(exp: Experiment) -> TrainingSchedule {
    match exp {
        Experiment::PatternGeneration => TrainingSchedule {
            iterations: 300,
            batch_size: 1,
            eval_every: 0,
            eval_iterations: 1,
        },
        Experiment::EvidenceAccumulation => TrainingSchedule {
            iterations: 150,
            batch_size: 8,
            eval_every: 50,
            eval_iterations: 4,
        },
        Experiment::Nmnist => TrainingSchedule {
            iterations: 200,
            batch_size: 1,
            eval_every: 50,
            eval_iterations: 10,
        },
    }
}

pub fn network_preset(task: &TaskConfig, variant: Variant, seed: u64, n_in: usize) -> Result<NetworkConfig, CliError> {
    let cfg = match task {
        TaskConfig::PatternGeneration(t) => {
            let mut c = NetworkConfig::small(n_in, 100, t.n_out, seed)?;
            c.input.init = WeightInit::Normal { mean: 0.0, std: 0.5 };
            c.recurrent.init = WeightInit::Normal { mean: 0.0, std: 0.1 };
            c.output.init = WeightInit::Normal { mean: 0.0, std: 0.05 };
            c.optimizer = OptimizerConfig::adam(2e-6);
            c.with_variant(variant)?
        }
        TaskConfig::EvidenceAccumulation(_) => {
            let mut c = NetworkConfig::small(n_in, 50, 2, seed)?;
            c.n_lif = 25;
            c.n_alif = 25;
            c.loss = LossKind::CrossEntropySoftmax;
            // a threshold jump of 1.7 per spike, rescaled by (1 - rho) / (1 - alpha)
            // since the adaptation variable here grows by z, not (1 - rho) z
            let beta_a = 1.7 * (1.0 - c.alif.rho) / (1.0 - c.alif.alpha);
            c.alif = LifParams::new(
                c.alif.dt,
                c.alif.tau_m,
                c.alif.v_th,
                beta_a,
                c.alif.tau_a,
                c.alif.reset,
                c.alif.surrogate,
            )?;
            c.input.init = WeightInit::Normal { mean: 0.0, std: 0.25 };
            c.recurrent.init = WeightInit::Normal { mean: 0.0, std: 0.14 };
            c.output.init = WeightInit::Normal { mean: 0.0, std: 0.14 };
            c.regularization = RegularizationParams {
                c_reg: 1.0,
                f_star: 10.0,
                mode: RegMode::Cumulative,
            };
            c.optimizer = OptimizerConfig::adam(1e-5);
            c.with_variant(variant)?
        }
        TaskConfig::Nmnist(t) => {
            let mut c = NetworkConfig::small(n_in, 100, t.digits.len(), seed)?;
            c.loss = LossKind::CrossEntropySoftmax;
            c.input.connectivity = Connectivity::FixedInDegree { k: n_in.min(100) };
            c.input.init = WeightInit::Normal { mean: 0.0, std: 0.3 };
            c.recurrent.init = WeightInit::Normal { mean: 0.0, std: 0.1 };
            c.output.init = WeightInit::Normal { mean: 0.0, std: 0.1 };
            c.optimizer = OptimizerConfig::adam(1e-5);
            c.with_variant(variant)?
        }
    };
    Ok(cfg)
}
