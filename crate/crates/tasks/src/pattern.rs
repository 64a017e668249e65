//! Pattern generation: a frozen Poisson input pattern mapped onto a target
//! built from four sinusoids.

use std::f64::consts::PI;

use eprop_core::engine::training::TaskStream;
use eprop_core::{SampleSpec, TargetSignal};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::{derive_seed, poisson_train};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternTaskConfig {
    /// Steps per sample.
    pub duration: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub input_rate_hz: f64,
    pub dt: f64,
    /// One frequency per sinusoid; the target repeats with the period of
    /// their greatest common divisor.
    pub frequencies_hz: Vec<f64>,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
}

impl Default for PatternTaskConfig {
    fn default() -> Self {
        PatternTaskConfig {
            duration: 1000,
            n_in: 100,
            n_out: 1,
            input_rate_hz: 10.0,
            dt: 1.0,
            frequencies_hz: vec![1.0, 2.0, 3.0, 5.0],
            amplitude_min: 0.5,
            amplitude_max: 2.0,
        }
    }
}

impl PatternTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.duration == 0 || self.n_out == 0 {
            return Err(config("pattern task needs a positive duration and at least one readout"));
        }
        if !(self.dt > 0.0) || !(self.input_rate_hz >= 0.0) {
            return Err(config("dt must be positive and the input rate non-negative"));
        }
        if !(self.amplitude_min <= self.amplitude_max) {
            return Err(config("amplitude_min must not exceed amplitude_max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub frequency_hz: f64,
    pub phase: f64,
}

impl Sinusoid {
    pub fn at(&self, t_ms: f64) -> f64 {
        self.amplitude * (2.0 * PI * self.frequency_hz * t_ms / 1000.0 + self.phase).sin()
    }
}

/// Seeded target components, one list per readout.
pub fn target_components(seed: u64, cfg: &PatternTaskConfig) -> Vec<Vec<Sinusoid>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, 0));
    (0..cfg.n_out)
        .map(|_| {
            cfg.frequencies_hz
                .iter()
                .map(|&f| Sinusoid {
                    amplitude: if cfg.amplitude_max > cfg.amplitude_min {
                        rng.random_range(cfg.amplitude_min..cfg.amplitude_max)
                    } else {
                        cfg.amplitude_min
                    },
                    frequency_hz: f,
                    phase: rng.random_range(0.0..2.0 * PI),
                })
                .collect()
        })
        .collect()
}

pub fn gen_pattern_task(seed: u64, cfg: &PatternTaskConfig) -> Result<SampleSpec> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 0));
    let input_spikes = (0..cfg.n_in)
        .map(|_| poisson_train(&mut rng, cfg.input_rate_hz, cfg.dt, 0, cfg.duration))
        .collect();
    let comps = target_components(seed, cfg);
    let values = (0..cfg.duration)
        .map(|t| {
            let t_ms = t as f64 * cfg.dt;
            comps.iter().map(|c| c.iter().map(|s| s.at(t_ms)).sum()).collect()
        })
        .collect();
    Ok(SampleSpec {
        duration: cfg.duration,
        input_spikes,
        target: TargetSignal {
            values,
            window: vec![true; cfg.duration],
        },
        label: None,
    })
}

/// Serves the same frozen sample for training and evaluation.
#[derive(Debug, Clone)]
pub struct PatternStream {
    sample: SampleSpec,
}

impl PatternStream {
    pub fn new(seed: u64, cfg: &PatternTaskConfig) -> Result<Self> {
        Ok(PatternStream {
            sample: gen_pattern_task(seed, cfg)?,
        })
    }

    pub fn sample(&self) -> &SampleSpec {
        &self.sample
    }
}

impl TaskStream for PatternStream {
    fn train_batch(&mut self, _iteration: usize, batch_size: usize) -> eprop_core::Result<Vec<SampleSpec>> {
        Ok(vec![self.sample.clone(); batch_size])
    }

    fn test_batch(&mut self, _iteration: usize, batch_size: usize) -> eprop_core::Result<Vec<SampleSpec>> {
        Ok(vec![self.sample.clone(); batch_size])
    }
}
