//! Network construction and the simulation loops.
//!
//! Every sample occupies `T + drain` steps on a global timeline, where the
//! drain covers the recurrent-to-readout delay, the softmax exchange and the
//! learning-signal delay. The time-driven runner computes every synapse's
//! gradient at every step with zero-latency readouts; the event-driven
//! runner archives postsynaptic signals and defers synapse work to spike
//! arrivals. Both follow the same summation order, so their losses and
//! weights agree bit for bit in the original scheme.

pub mod event_driven;
pub mod io;
pub mod scaling;
pub mod time_driven;
pub mod training;

use std::collections::VecDeque;
use std::ops::Range;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Connectivity, NetworkConfig, ProjectionConfig, SimMode, UpdateKind};
use crate::error::{EpropError, Result};
use crate::history::{ArchiveMode, ReadoutArchive, RecurrentArchive};
use crate::neuron::RecurrentNeuronState;
use crate::optim::ParamOptimizer;
use crate::plasticity::{EligibilityState, RegKernel, TraceParams};
use crate::sample::SampleSpec;
use crate::signals::FeedbackMatrix;

/// Independent random streams derived from the network seed.
pub(crate) mod stream {
    pub const INPUT: u64 = 1;
    pub const RECURRENT: u64 = 2;
    pub const OUTPUT: u64 = 3;
    pub const FEEDBACK: u64 = 4;
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionKind {
    Input,
    Recurrent,
    Output,
}

/// A plastic (or static) connection together with its learning state.
#[derive(Debug, Clone, Default)]
pub struct EpropSynapse {
    pub source: u32,
    pub target: u32,
    pub weight: f64,
    pub elig: EligibilityState,
    pub opt: ParamOptimizer,
    /// Registration in the target's update history.
    pub(crate) t_reg: i64,
    /// Surrogate gradient of the last processed entry (per-spike updates).
    pub(crate) psi_prev: f64,
    /// Sample with arrivals whose gradient is still outstanding.
    pub(crate) pending: Option<usize>,
    /// First sample not yet accounted for by this synapse.
    pub(crate) next_sample: usize,
    /// Arrival steps not yet consumed by a gradient computation.
    pub(crate) arrivals: VecDeque<i64>,
}

/// Synapses of one projection, sorted by (source, target).
#[derive(Debug, Clone)]
pub struct Projection {
    pub kind: ProjectionKind,
    pub plastic: bool,
    pub syn: Vec<EpropSynapse>,
    offsets: Vec<usize>,
}

impl Projection {
    fn build(
        kind: ProjectionKind,
        pc: &ProjectionConfig,
        n_src: usize,
        n_tgt: usize,
        exclude_self: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut pairs: Vec<(u32, u32)> = Vec::new();
        for tgt in 0..n_tgt {
            let candidates: Vec<usize> = (0..n_src).filter(|&s| !(exclude_self && s == tgt)).collect();
            match pc.connectivity {
                Connectivity::Dense => pairs.extend(candidates.iter().map(|&s| (s as u32, tgt as u32))),
                Connectivity::FixedInDegree { k } => {
                    if k > candidates.len() {
                        return Err(EpropError::Connectivity(format!(
                            "in-degree {k} exceeds {} candidate sources",
                            candidates.len()
                        )));
                    }
                    let mut chosen: Vec<usize> =
                        sample_indices(rng, candidates.len(), k).into_iter().map(|i| candidates[i]).collect();
                    chosen.sort_unstable();
                    pairs.extend(chosen.into_iter().map(|s| (s as u32, tgt as u32)));
                }
            }
        }
        let mut syn = Vec::with_capacity(pairs.len());
        for (s, t) in pairs {
            syn.push(EpropSynapse {
                source: s,
                target: t,
                weight: pc.init.sample(rng)?,
                ..Default::default()
            });
        }
        Ok(Self::from_synapses(kind, pc.plastic, n_src, syn))
    }

    /// Assemble a projection from explicit synapses.
    pub fn from_synapses(kind: ProjectionKind, plastic: bool, n_src: usize, mut syn: Vec<EpropSynapse>) -> Self {
        syn.sort_by_key(|s| (s.source, s.target));
        let mut offsets = vec![0usize; n_src + 1];
        for s in &syn {
            offsets[s.source as usize + 1] += 1;
        }
        for i in 0..n_src {
            offsets[i + 1] += offsets[i];
        }
        Projection {
            kind,
            plastic,
            syn,
            offsets,
        }
    }

    #[inline]
    pub fn outgoing(&self, source: usize) -> Range<usize> {
        self.offsets[source]..self.offsets[source + 1]
    }

    pub fn in_degree(&self, target: usize) -> usize {
        self.syn.iter().filter(|s| s.target as usize == target).count()
    }

    pub fn weights(&self) -> Vec<(u32, u32, f64)> {
        self.syn.iter().map(|s| (s.source, s.target, s.weight)).collect()
    }

    pub fn index_of(&self, source: usize, target: usize) -> Option<usize> {
        let r = self.outgoing(source);
        self.syn[r.clone()]
            .binary_search_by_key(&(target as u32), |s| s.target)
            .ok()
            .map(|i| r.start + i)
    }
}

/// Bookkeeping for one simulated sample on the global timeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SampleRecord {
    /// Step preceding the sample's first step.
    pub start: i64,
    pub duration: i64,
    pub slot: i64,
    pub plastic: bool,
    /// Last sample of a training iteration (per-iteration updates apply here).
    pub iteration_end: bool,
    /// 1/N for a mini-batch of N samples.
    pub scale: f64,
    pub kernel: RegKernel,
}

/// What a sample run records beyond its loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecordLevel {
    #[default]
    None,
    Raster,
    /// Raster plus per-step signals (time-driven mode only).
    Full,
}

/// Per-step signals of one time-driven sample, indexed `[t - 1][unit]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepTrace {
    pub psi: Vec<Vec<f64>>,
    pub z: Vec<Vec<bool>>,
    pub x: Vec<Vec<bool>>,
    pub l: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub err: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleResult {
    /// Sum of the per-step losses over the learning window.
    pub loss: f64,
    pub prediction: Option<usize>,
    pub spikes_recurrent: u64,
    /// `(neuron, global step)` pairs when recording.
    pub raster: Vec<(u32, i64)>,
    pub trace: Option<StepTrace>,
}

/// All weights, for checksums and dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSnapshot {
    pub input: Vec<(u32, u32, f64)>,
    pub recurrent: Vec<(u32, u32, f64)>,
    pub output: Vec<(u32, u32, f64)>,
}

impl WeightSnapshot {
    /// Order-sensitive checksum over the exact bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (s, t, w) in self.input.iter().chain(&self.recurrent).chain(&self.output) {
            for word in [*s as u64, *t as u64, w.to_bits()] {
                h ^= word;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// Archives and spike queues used only by the event-driven runner.
#[derive(Debug, Clone)]
pub(crate) struct EventState {
    pub rec_archives: Vec<RecurrentArchive>,
    pub out_archives: Vec<ReadoutArchive>,
    /// Recurrent spikes of recent steps, newest last.
    pub emitted: VecDeque<(i64, Vec<u32>)>,
    /// Learning signals in flight: (delivery step, archive step, values).
    pub pending_l: VecDeque<(i64, i64, Vec<f64>)>,
    pub dirty_rec: Vec<bool>,
    pub dirty_out: Vec<bool>,
}

pub struct Network {
    pub cfg: NetworkConfig,
    pub input: Projection,
    pub recurrent: Projection,
    pub output: Projection,
    pub feedback: FeedbackMatrix,
    pub(crate) kappa: f64,
    pub(crate) filter: f64,
    // neuron state
    pub(crate) rec: Vec<RecurrentNeuronState>,
    pub(crate) psi: Vec<f64>,
    pub(crate) psi_prev: Vec<f64>,
    pub(crate) rate: Vec<f64>,
    pub(crate) z_prev: Vec<bool>,
    pub(crate) y: Vec<f64>,
    pub(crate) y_prev: Vec<f64>,
    // timeline
    pub(crate) now: i64,
    pub(crate) samples: Vec<SampleRecord>,
    pub(crate) ed: Option<EventState>,
    pub(crate) forced: Vec<(usize, i64)>,
    pub(crate) record: RecordLevel,
    /// Accumulate gradients without touching weights or optimizer state.
    pub(crate) frozen: bool,
    // scratch
    pub(crate) in_drive: Vec<f64>,
    pub(crate) rec_drive: Vec<f64>,
    pub(crate) out_drive: Vec<f64>,
    pub(crate) err: Vec<f64>,
    pub(crate) l: Vec<f64>,
    pub(crate) scratch: Vec<f64>,
}

impl Network {
    pub fn build(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let j = cfg.n_rec();
        let k = cfg.n_out;
        let input = Projection::build(
            ProjectionKind::Input,
            &cfg.input,
            cfg.n_in,
            j,
            false,
            &mut rng_for(cfg.seed, stream::INPUT),
        )?;
        let recurrent = Projection::build(
            ProjectionKind::Recurrent,
            &cfg.recurrent,
            j,
            j,
            true,
            &mut rng_for(cfg.seed, stream::RECURRENT),
        )?;
        let output = Projection::build(
            ProjectionKind::Output,
            &cfg.output,
            j,
            k,
            false,
            &mut rng_for(cfg.seed, stream::OUTPUT),
        )?;
        let feedback = FeedbackMatrix::random(j, k, &cfg.feedback, &mut rng_for(cfg.seed, stream::FEEDBACK))?;
        Self::assemble(cfg, input, recurrent, output, feedback)
    }

    /// Build from explicit projections (used by tests and custom setups).
    pub fn assemble(
        cfg: &NetworkConfig,
        input: Projection,
        recurrent: Projection,
        output: Projection,
        feedback: FeedbackMatrix,
    ) -> Result<Self> {
        cfg.validate()?;
        let j = cfg.n_rec();
        let k = cfg.n_out;
        if feedback.n_rec != j || feedback.n_out != k {
            return Err(EpropError::Dimension {
                context: "feedback matrix",
                expected: j * k,
                actual: feedback.n_rec * feedback.n_out,
            });
        }
        let rec = (0..j).map(|n| RecurrentNeuronState::rest(cfg.params_of(n))).collect();
        let mut net = Network {
            kappa: cfg.kappa(),
            filter: cfg.filter_constant(),
            cfg: cfg.clone(),
            input,
            recurrent,
            output,
            feedback,
            rec,
            psi: vec![0.0; j],
            psi_prev: vec![0.0; j],
            rate: vec![0.0; j],
            z_prev: vec![false; j],
            y: vec![0.0; k],
            y_prev: vec![0.0; k],
            now: 0,
            samples: Vec::new(),
            ed: None,
            forced: Vec::new(),
            record: RecordLevel::None,
            frozen: false,
            in_drive: vec![0.0; j],
            rec_drive: vec![0.0; j],
            out_drive: vec![0.0; k],
            err: vec![0.0; k],
            l: vec![0.0; j],
            scratch: vec![0.0; k],
        };
        if cfg.mode == SimMode::EventDriven {
            net.init_event_state();
        }
        Ok(net)
    }

    fn init_event_state(&mut self) {
        let cfg = &self.cfg;
        let per_spike = cfg.policy.kind == UpdateKind::PerSpike;
        let cutoff = cfg.delays.cutoff as i64;
        let d = cfg.delays.d as i64;
        // per-iteration intervals are set once the sample length is known
        let rec_mode = if per_spike {
            ArchiveMode::PerSpike {
                cutoff,
                lag: cfg.d_sync(),
            }
        } else {
            ArchiveMode::FixedInterval {
                update_interval: 1,
                shift: 0,
            }
        };
        let out_mode = if per_spike {
            ArchiveMode::PerSpike {
                cutoff,
                lag: cfg.loss.exchange_latency(),
            }
        } else {
            ArchiveMode::FixedInterval {
                update_interval: 1,
                shift: d,
            }
        };
        let mut rec_archives = vec![RecurrentArchive::new(rec_mode); cfg.n_rec()];
        let mut out_archives = vec![ReadoutArchive::new(out_mode); cfg.n_out];
        let rec_reg = 0;
        let out_reg = if per_spike { 0 } else { d };
        for proj in [&mut self.input, &mut self.recurrent] {
            if proj.plastic {
                for s in &mut proj.syn {
                    s.t_reg = rec_reg;
                    rec_archives[s.target as usize].updates.add(rec_reg);
                }
            }
        }
        if self.output.plastic {
            for s in &mut self.output.syn {
                s.t_reg = out_reg;
                out_archives[s.target as usize].updates.add(out_reg);
            }
        }
        self.ed = Some(EventState {
            rec_archives,
            out_archives,
            emitted: VecDeque::new(),
            pending_l: VecDeque::new(),
            dirty_rec: vec![false; cfg.n_rec()],
            dirty_out: vec![false; cfg.n_out],
        });
    }

    /// Last completed global step.
    pub fn now(&self) -> i64 {
        self.now
    }

    pub fn set_record(&mut self, level: RecordLevel) {
        self.record = level;
    }

    /// With `frozen` set, plastic samples only accumulate gradients
    /// (see [`Network::gradient_sums`]); weights and optimizer state stay put.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    /// Force recurrent neuron `neuron` to spike at global step `step`.
    pub fn force_spike(&mut self, neuron: usize, step: i64) {
        self.forced.push((neuron, step));
    }

    pub fn projection(&self, kind: ProjectionKind) -> &Projection {
        match kind {
            ProjectionKind::Input => &self.input,
            ProjectionKind::Recurrent => &self.recurrent,
            ProjectionKind::Output => &self.output,
        }
    }

    pub fn projection_mut(&mut self, kind: ProjectionKind) -> &mut Projection {
        match kind {
            ProjectionKind::Input => &mut self.input,
            ProjectionKind::Recurrent => &mut self.recurrent,
            ProjectionKind::Output => &mut self.output,
        }
    }

    pub fn recurrent_archive(&self, neuron: usize) -> Option<&RecurrentArchive> {
        self.ed.as_ref().map(|e| &e.rec_archives[neuron])
    }

    pub fn readout_archive(&self, readout: usize) -> Option<&ReadoutArchive> {
        self.ed.as_ref().map(|e| &e.out_archives[readout])
    }

    /// Accumulated gradient per synapse (in projection order).
    pub fn gradient_sums(&self, kind: ProjectionKind) -> Vec<f64> {
        self.projection(kind).syn.iter().map(|s| s.elig.grad_accum).collect()
    }

    pub fn clear_gradient_sums(&mut self) {
        for p in [&mut self.input, &mut self.recurrent, &mut self.output] {
            for s in &mut p.syn {
                s.elig.grad_accum = 0.0;
            }
        }
    }

    /// Apply every outstanding deferred update, then return all weights.
    pub fn weights(&mut self) -> Result<WeightSnapshot> {
        self.flush()?;
        Ok(WeightSnapshot {
            input: self.input.weights(),
            recurrent: self.recurrent.weights(),
            output: self.output.weights(),
        })
    }

    /// Run one iteration: the samples form a mini-batch when `plastic`.
    pub fn run_iteration(&mut self, batch: &[SampleSpec], plastic: bool) -> Result<Vec<SampleResult>> {
        if batch.is_empty() {
            return Err(EpropError::Empty("mini-batch"));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut out = Vec::with_capacity(batch.len());
        for (i, sample) in batch.iter().enumerate() {
            let iteration_end = plastic && i + 1 == batch.len();
            out.push(self.run_sample_inner(sample, plastic, iteration_end, scale)?);
        }
        Ok(out)
    }

    /// Run a single sample; when `plastic` it is a one-sample iteration.
    pub fn run_sample(&mut self, sample: &SampleSpec, plastic: bool) -> Result<SampleResult> {
        self.run_sample_inner(sample, plastic, plastic, 1.0)
    }

    fn run_sample_inner(
        &mut self,
        sample: &SampleSpec,
        plastic: bool,
        iteration_end: bool,
        scale: f64,
    ) -> Result<SampleResult> {
        sample.validate(self.cfg.n_in, self.cfg.n_out)?;
        let duration = sample.duration as i64;
        let slot = duration + self.cfg.drain() as i64;
        let record = SampleRecord {
            start: self.now,
            duration,
            slot,
            plastic,
            iteration_end,
            scale,
            kernel: self.cfg.regularization.kernel(sample.duration)?,
        };
        if self.cfg.policy.kind == UpdateKind::PerIteration {
            if let Some(first) = self.samples.first() {
                if first.duration != duration {
                    return Err(EpropError::InvalidConfig(
                        "per-iteration updates need samples of constant duration".into(),
                    ));
                }
            }
        }
        self.samples.push(record);
        let idx = self.samples.len() - 1;
        let result = match self.cfg.mode {
            SimMode::TimeDriven => self.run_time_driven(sample, idx),
            SimMode::EventDriven => self.run_event_driven(sample, idx),
        }?;
        self.now += slot;
        Ok(result)
    }

    pub(crate) fn trace_params(&self, neuron: usize, kernel: RegKernel) -> TraceParams {
        TraceParams::new(self.cfg.params_of(neuron), self.filter, kernel)
    }

    pub(crate) fn reset_dynamics(&mut self) {
        for (n, s) in self.rec.iter_mut().enumerate() {
            *s = RecurrentNeuronState::rest(self.cfg.params_of(n));
        }
        self.psi.iter_mut().for_each(|x| *x = 0.0);
        self.psi_prev.iter_mut().for_each(|x| *x = 0.0);
        self.rate.iter_mut().for_each(|x| *x = 0.0);
        self.z_prev.iter_mut().for_each(|x| *x = false);
        self.y.iter_mut().for_each(|x| *x = 0.0);
        self.y_prev.iter_mut().for_each(|x| *x = 0.0);
    }

    /// Apply all outstanding deferred updates (event-driven mode).
    pub fn flush(&mut self) -> Result<()> {
        if self.cfg.mode == SimMode::EventDriven {
            self.flush_event_driven()?;
        }
        Ok(())
    }
}
