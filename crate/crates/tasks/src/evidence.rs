//! Evidence accumulation: a sequence of left/right cues, a delay, then a
//! recall period in which the network reports the side with more cues.
//!
//! Input channels are laid out as `[left | right | background | recall]`.
//! Label 0 is left, 1 is right.

use eprop_core::engine::training::TaskStream;
use eprop_core::{SampleSpec, TargetSignal};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::{derive_seed, poisson_train};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvidenceTaskConfig {
    pub n_cues: usize,
    /// Steps per cue.
    pub cue_duration: usize,
    /// Silent steps after each cue.
    pub inter_cue: usize,
    /// Steps between the last cue gap and the recall period.
    pub delay: usize,
    pub recall: usize,
    pub n_left: usize,
    pub n_right: usize,
    pub n_background: usize,
    pub n_recall: usize,
    pub cue_rate_hz: f64,
    pub background_rate_hz: f64,
    pub recall_rate_hz: f64,
    pub dt: f64,
}

impl Default for EvidenceTaskConfig {
    fn default() -> Self {
        EvidenceTaskConfig {
            n_cues: 7,
            cue_duration: 100,
            inter_cue: 50,
            delay: 1000,
            recall: 150,
            n_left: 10,
            n_right: 10,
            n_background: 10,
            n_recall: 10,
            cue_rate_hz: 40.0,
            background_rate_hz: 10.0,
            recall_rate_hz: 40.0,
            dt: 1.0,
        }
    }
}

impl EvidenceTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cues == 0 {
            return Err(config("at least one cue is required"));
        }
        if self.recall == 0 || self.cue_duration == 0 {
            return Err(config("cue and recall durations must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(config("dt must be positive"));
        }
        Ok(())
    }

    pub fn n_in(&self) -> usize {
        self.n_left + self.n_right + self.n_background + self.n_recall
    }

    pub fn duration(&self) -> usize {
        self.n_cues * (self.cue_duration + self.inter_cue) + self.delay + self.recall
    }

    pub fn recall_start(&self) -> usize {
        self.duration() - self.recall
    }
}

/// Cue sides (`true` = right) with a strict majority; ties are re-drawn.
pub fn draw_cues<R: Rng>(rng: &mut R, n_cues: usize) -> Vec<bool> {
    loop {
        let cues: Vec<bool> = (0..n_cues).map(|_| rng.random_bool(0.5)).collect();
        let right = cues.iter().filter(|&&c| c).count();
        if 2 * right != n_cues {
            return cues;
        }
    }
}

pub fn majority_label(cues: &[bool]) -> usize {
    let right = cues.iter().filter(|&&c| c).count();
    usize::from(2 * right > cues.len())
}

/// Build a sample for a given cue sequence.
pub fn evidence_sample<R: Rng>(rng: &mut R, cfg: &EvidenceTaskConfig, cues: &[bool]) -> Result<SampleSpec> {
    cfg.validate()?;
    let t_len = cfg.duration();
    let recall_start = cfg.recall_start();
    let mut input_spikes = Vec::with_capacity(cfg.n_in());
    for (side, n) in [(false, cfg.n_left), (true, cfg.n_right)] {
        for _ in 0..n {
            let mut train = Vec::new();
            for (c, &cue) in cues.iter().enumerate() {
                if cue == side {
                    let from = c * (cfg.cue_duration + cfg.inter_cue);
                    train.extend(poisson_train(rng, cfg.cue_rate_hz, cfg.dt, from, from + cfg.cue_duration));
                }
            }
            input_spikes.push(train);
        }
    }
    for _ in 0..cfg.n_background {
        input_spikes.push(poisson_train(rng, cfg.background_rate_hz, cfg.dt, 0, t_len));
    }
    for _ in 0..cfg.n_recall {
        input_spikes.push(poisson_train(rng, cfg.recall_rate_hz, cfg.dt, recall_start, t_len));
    }
    let label = majority_label(cues);
    let window = (0..t_len).map(|t| t >= recall_start).collect();
    Ok(SampleSpec {
        duration: t_len,
        input_spikes,
        target: TargetSignal::one_hot(label, 2, window)?,
        label: Some(label),
    })
}

pub fn gen_evidence_task(seed: u64, cfg: &EvidenceTaskConfig) -> Result<SampleSpec> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cues = draw_cues(&mut rng, cfg.n_cues);
    evidence_sample(&mut rng, cfg, &cues)
}

/// Fresh random samples each iteration; training and evaluation draw from
/// disjoint seed streams.
#[derive(Debug, Clone)]
pub struct EvidenceStream {
    pub cfg: EvidenceTaskConfig,
    seed: u64,
}

impl EvidenceStream {
    pub fn new(seed: u64, cfg: EvidenceTaskConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(EvidenceStream { cfg, seed })
    }

    fn batch(&self, stream: u64, iteration: usize, batch_size: usize) -> Result<Vec<SampleSpec>> {
        (0..batch_size)
            .map(|i| {
                let s = derive_seed(self.seed, stream, (iteration * batch_size + i) as u64);
                gen_evidence_task(s, &self.cfg)
            })
            .collect()
    }
}

impl TaskStream for EvidenceStream {
    fn train_batch(&mut self, iteration: usize, batch_size: usize) -> eprop_core::Result<Vec<SampleSpec>> {
        Ok(self.batch(1, iteration, batch_size)?)
    }

    fn test_batch(&mut self, iteration: usize, batch_size: usize) -> eprop_core::Result<Vec<SampleSpec>> {
        Ok(self.batch(2, iteration, batch_size)?)
    }
}
