//! Network and training configuration.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, EpropError, Result};
use crate::neuron::{LifParams, ResetMode, SurrogateKind, SurrogateSpec};
use crate::optim::OptimizerConfig;
use crate::plasticity::{RegMode, RegularizationParams};
use crate::signals::LossKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "dist")]
pub enum WeightInit {
    Normal { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
    Constant { value: f64 },
}

impl WeightInit {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<f64> {
        match *self {
            WeightInit::Normal { mean, std } => Normal::new(mean, std)
                .map(|d| d.sample(rng))
                .map_err(|e| invalid("normal init", e.to_string())),
            WeightInit::Uniform { low, high } => {
                if !(low <= high) {
                    return Err(invalid("uniform init", "low must not exceed high"));
                }
                if low == high {
                    Ok(low)
                } else {
                    Ok(rng.random_range(low..high))
                }
            }
            WeightInit::Constant { value } => Ok(value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Connectivity {
    /// All-to-all (recurrent projections exclude autapses).
    Dense,
    /// Each target draws `k` distinct sources.
    FixedInDegree { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub connectivity: Connectivity,
    pub init: WeightInit,
    pub plastic: bool,
}

impl ProjectionConfig {
    pub fn dense(init: WeightInit, plastic: bool) -> Self {
        ProjectionConfig {
            connectivity: Connectivity::Dense,
            init,
            plastic,
        }
    }
}

/// Transmission and learning-signal delays of the event-driven engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DelayConfig {
    /// Recurrent to readout transmission delay (steps).
    pub d: u32,
    /// Readout to recurrent learning-signal delay (steps).
    pub d_ls: u32,
    /// Inter-spike trace cutoff for per-spike updates (steps).
    pub cutoff: u32,
}

impl Default for DelayConfig {
    fn default() -> Self {
        DelayConfig {
            d: 1,
            d_ls: 0,
            cutoff: 64,
        }
    }
}

impl DelayConfig {
    /// Steps between a recurrent step and the arrival of its learning signal.
    pub fn d_sync(&self, loss: LossKind) -> i64 {
        self.d as i64 + loss.exchange_latency() + self.d_ls as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateKind {
    PerIteration,
    PerSpike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdatePolicy {
    pub kind: UpdateKind,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum EligibilityFilter {
    /// Filter with the readout decay kappa.
    Readout,
    /// Decoupled filter constant (0 removes the filter).
    Constant { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Bsshslm2020,
    EpropPlus,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "bsshslm2020" | "bsshslm_2020" => Ok(Variant::Bsshslm2020),
            "eprop-plus" | "eprop+" => Ok(Variant::EpropPlus),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    TimeDriven,
    EventDriven,
}

impl std::str::FromStr for SimMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "time-driven" => Ok(SimMode::TimeDriven),
            "event-driven" => Ok(SimMode::EventDriven),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_in: usize,
    pub n_lif: usize,
    pub n_alif: usize,
    pub n_out: usize,
    pub lif: LifParams,
    pub alif: LifParams,
    /// Readout membrane time constant (ms).
    pub tau_m_out: f64,
    pub input: ProjectionConfig,
    pub recurrent: ProjectionConfig,
    pub output: ProjectionConfig,
    pub feedback: WeightInit,
    pub delays: DelayConfig,
    pub loss: LossKind,
    pub regularization: RegularizationParams,
    pub optimizer: OptimizerConfig,
    pub policy: UpdatePolicy,
    pub eligibility_filter: EligibilityFilter,
    pub variant: Variant,
    pub mode: SimMode,
    pub reset_between_samples: bool,
    pub seed: u64,
}

impl NetworkConfig {
    /// A small plain-LIF network with the original-scheme defaults.
    pub fn small(n_in: usize, n_rec: usize, n_out: usize, seed: u64) -> Result<Self> {
        let surrogate = SurrogateSpec::new(SurrogateKind::PiecewiseLinear, 0.3, 1.0)?;
        let lif = LifParams::new(1.0, 20.0, 0.6, 0.0, 2000.0, ResetMode::SubtractThreshold, surrogate)?;
        let alif = LifParams::new(1.0, 20.0, 0.6, 1.7, 2000.0, ResetMode::SubtractThreshold, surrogate)?;
        let in_std = 1.0 / (n_in.max(1) as f64).sqrt();
        let rec_std = 1.0 / (n_rec.max(1) as f64).sqrt();
        Ok(NetworkConfig {
            n_in,
            n_lif: n_rec,
            n_alif: 0,
            n_out,
            lif,
            alif,
            tau_m_out: 30.0,
            input: ProjectionConfig::dense(WeightInit::Normal { mean: 0.0, std: in_std }, true),
            recurrent: ProjectionConfig::dense(WeightInit::Normal { mean: 0.0, std: rec_std }, true),
            output: ProjectionConfig::dense(WeightInit::Normal { mean: 0.0, std: rec_std }, true),
            feedback: WeightInit::Normal { mean: 0.0, std: 1.0 },
            delays: DelayConfig::default(),
            loss: LossKind::Mse,
            regularization: RegularizationParams::off(),
            optimizer: OptimizerConfig::adam(1e-4),
            policy: UpdatePolicy {
                kind: UpdateKind::PerIteration,
                batch_size: 1,
            },
            eligibility_filter: EligibilityFilter::Readout,
            variant: Variant::Bsshslm2020,
            mode: SimMode::EventDriven,
            reset_between_samples: true,
            seed,
        })
    }

    /// Switch to the variant's defaults for policy, resets, filter and surrogate.
    pub fn with_variant(mut self, variant: Variant) -> Result<Self> {
        self.variant = variant;
        match variant {
            Variant::Bsshslm2020 => {
                self.policy.kind = UpdateKind::PerIteration;
                self.reset_between_samples = true;
                self.eligibility_filter = EligibilityFilter::Readout;
            }
            Variant::EpropPlus => {
                self.policy.kind = UpdateKind::PerSpike;
                self.reset_between_samples = false;
                self.eligibility_filter = EligibilityFilter::Constant { value: 0.0 };
                if self.loss == LossKind::CrossEntropySoftmax {
                    self.loss = LossKind::TemporalMse;
                }
                if !matches!(self.regularization.mode, RegMode::Ema { .. }) {
                    self.regularization.mode = RegMode::Ema { beta: 0.999 };
                }
                for p in [&mut self.lif, &mut self.alif] {
                    let s = SurrogateSpec::new(SurrogateKind::Exponential, p.surrogate.gamma, p.surrogate.beta)?;
                    *p = LifParams::new(p.dt, p.tau_m, p.v_th, p.beta_a, p.tau_a, ResetMode::ResetToValue { v_reset: 0.0 }, s)?;
                }
            }
        }
        Ok(self)
    }

    pub fn n_rec(&self) -> usize {
        self.n_lif + self.n_alif
    }

    pub fn d_sync(&self) -> i64 {
        self.delays.d_sync(self.loss)
    }

    /// Silent steps appended to every sample so its learning signals land
    /// before the next sample starts.
    pub fn drain(&self) -> usize {
        self.d_sync() as usize
    }

    pub fn kappa(&self) -> f64 {
        (-self.lif.dt / self.tau_m_out).exp()
    }

    pub fn filter_constant(&self) -> f64 {
        match self.eligibility_filter {
            EligibilityFilter::Readout => self.kappa(),
            EligibilityFilter::Constant { value } => value,
        }
    }

    pub fn params_of(&self, j: usize) -> &LifParams {
        if j < self.n_lif {
            &self.lif
        } else {
            &self.alif
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EpropError::InvalidConfig(m.to_string()));
        if self.n_rec() == 0 {
            return bad("the recurrent population must not be empty");
        }
        if self.n_out == 0 {
            return bad("at least one readout is required");
        }
        if !(self.tau_m_out > 0.0) {
            return Err(invalid("tau_m_out", "must be positive"));
        }
        if self.lif.dt != self.alif.dt {
            return bad("LIF and ALIF populations must share dt");
        }
        if self.policy.batch_size == 0 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        if let EligibilityFilter::Constant { value } = self.eligibility_filter {
            if !(0.0..1.0).contains(&value) {
                return Err(invalid("eligibility filter", "must lie in [0, 1)"));
            }
        }
        self.regularization.validate()?;
        self.optimizer.validate()?;
        for (name, proj, n_src, recurrent) in [
            ("input", &self.input, self.n_in, false),
            ("recurrent", &self.recurrent, self.n_rec(), true),
            ("output", &self.output, self.n_rec(), false),
        ] {
            if let Connectivity::FixedInDegree { k } = proj.connectivity {
                let available = if recurrent { n_src.saturating_sub(1) } else { n_src };
                if k > available {
                    return Err(EpropError::Connectivity(format!(
                        "{name} in-degree {k} exceeds the {available} available sources"
                    )));
                }
            }
        }
        let per_spike = self.policy.kind == UpdateKind::PerSpike;
        match self.variant {
            Variant::Bsshslm2020 => {
                if per_spike || !self.reset_between_samples {
                    return bad("bsshslm2020 requires per-iteration updates with resets between samples");
                }
            }
            Variant::EpropPlus => {
                if !per_spike {
                    return bad("eprop-plus requires per-spike updates");
                }
                if self.loss == LossKind::CrossEntropySoftmax {
                    return bad("eprop-plus classifies with a mean-squared error, not cross-entropy");
                }
                if self.reset_between_samples {
                    return bad("eprop-plus runs with continuous dynamics (no resets)");
                }
            }
        }
        if !per_spike && !self.reset_between_samples {
            return bad("per-iteration updates require resets between samples");
        }
        if per_spike {
            if self.regularization.is_active()
                && !matches!(self.regularization.mode, RegMode::Ema { .. })
            {
                return bad("per-spike updates support only EMA firing-rate regularization");
            }
            if (self.delays.cutoff as i64) <= self.d_sync() {
                return bad("the trace cutoff must exceed the synchronization delay");
            }
        }
        if self.delays.cutoff == 0 {
            return Err(invalid("cutoff", "must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn defaults_validate() {
        let c = NetworkConfig::small(3, 4, 1, 1).unwrap();
        c.validate().unwrap();
        let p = c.clone().with_variant(Variant::EpropPlus).unwrap();
        p.validate().unwrap();
        assert_eq!(p.lif.surrogate.kind, SurrogateKind::Exponential);
    }

    #[test]
    fn variant_constraints() {
        let mut c = NetworkConfig::small(3, 4, 1, 1).unwrap();
        c.policy.kind = UpdateKind::PerSpike;
        assert!(c.validate().is_err());
        let mut p = NetworkConfig::small(3, 4, 1, 1)
            .unwrap()
            .with_variant(Variant::EpropPlus)
            .unwrap();
        p.loss = LossKind::CrossEntropySoftmax;
        assert!(p.validate().is_err());
        let mut p = NetworkConfig::small(3, 4, 1, 1)
            .unwrap()
            .with_variant(Variant::EpropPlus)
            .unwrap();
        p.delays.cutoff = 1;
        assert!(p.validate().is_err());
    }

    #[test]
    fn in_degree_must_fit() {
        let mut c = NetworkConfig::small(3, 4, 1, 1).unwrap();
        c.recurrent.connectivity = Connectivity::FixedInDegree { k: 4 };
        assert!(matches!(c.validate(), Err(EpropError::Connectivity(_))));
        c.recurrent.connectivity = Connectivity::FixedInDegree { k: 3 };
        assert!(c.validate().is_ok());
    }

    #[test]
    fn sync_delay_includes_exchange() {
        let d = DelayConfig {
            d: 2,
            d_ls: 1,
            cutoff: 10,
        };
        assert_eq!(d.d_sync(LossKind::Mse), 3);
        assert_eq!(d.d_sync(LossKind::CrossEntropySoftmax), 4);
    }

    #[test]
    fn weight_init_is_seeded() {
        let init = WeightInit::Normal { mean: 0.0, std: 1.0 };
        let a: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(3);
            (0..5).map(|_| init.sample(&mut r).unwrap()).collect()
        };
        let b: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(3);
            (0..5).map(|_| init.sample(&mut r).unwrap()).collect()
        };
        assert_eq!(a, b);
        assert!(WeightInit::Uniform { low: 1.0, high: 0.0 }
            .sample(&mut ChaCha8Rng::seed_from_u64(0))
            .is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = NetworkConfig::small(3, 4, 2, 9).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        let back: NetworkConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(c, back);
    }
}
