//! Multi-worker benchmark engine for activity-invariant workloads.
//!
//! Recurrent neurons fire periodically regardless of input (ignore-and-fire),
//! so the spike trains are fixed and runtimes compare across worker counts
//! and network sizes. Each neuron still integrates a shadow membrane voltage
//! so that the plastic run has surrogate gradients to archive.
//!
//! Neurons, readouts and input generators are partitioned round-robin. Per
//! step every worker delivers the previous step's spikes to the synapses it
//! owns, updates its neurons, and publishes its spikes and readout errors;
//! a barrier closes the step. All transmissions take one step.

use std::sync::{Barrier, Mutex};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EpropError, Result};
use crate::history::{ArchiveMode, ReadoutArchive, RecurrentArchive};
use crate::neuron::{
    step_ignore_and_fire, surrogate_gradient, IgnoreAndFireState, LifParams, ResetMode, SurrogateKind, SurrogateSpec,
};
use crate::optim::OptimizerConfig;
use crate::plasticity::{ema_rate_step, RegKernel, TraceParams};

use super::event_driven::{arrival_per_spike, readout_params, Ctx};
use super::{EpropSynapse, SampleRecord, WeightSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub n_rec: usize,
    pub n_in: usize,
    pub n_out: usize,
    /// Recurrent and input rate (spikes/s).
    pub rate_hz: f64,
    pub dt: f64,
    pub k_in: usize,
    pub k_rec: usize,
    pub k_out: usize,
    pub feedback_out_degree: usize,
    pub seed: u64,
}

/// Connectivity and initial phases of a benchmark network.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingNetwork {
    pub params: ScalingParams,
    pub period: u64,
    pub phases: Vec<u64>,
    /// `(source, target, weight)` triples.
    pub input: Vec<(u32, u32, f64)>,
    pub recurrent: Vec<(u32, u32, f64)>,
    pub output: Vec<(u32, u32, f64)>,
    /// `(readout, recurrent neuron, weight)`.
    pub feedback: Vec<(u32, u32, f64)>,
}

impl ScalingNetwork {
    pub fn synapse_count(&self) -> usize {
        self.input.len() + self.recurrent.len() + self.output.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRun {
    pub steps: u64,
    pub workers: usize,
    pub plastic: bool,
    pub cutoff: u32,
    pub record_spikes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub workers: usize,
    pub plastic: bool,
    pub n_rec: usize,
    pub synapses: usize,
    pub steps: u64,
    pub simulated_s: f64,
    pub runtime_s: f64,
    pub real_time_factor: f64,
    pub spikes_recurrent: u64,
    pub spikes_input: u64,
    pub recurrent_rate_hz: f64,
    pub input_rate_hz: f64,
    /// Order-independent hash over all recurrent `(neuron, step)` spikes.
    pub spike_hash: u64,
    pub weight_checksum: u64,
}

/// CSR over the synapses one worker owns, grouped by source.
struct OwnedSyn {
    offsets: Vec<usize>,
    syn: Vec<EpropSynapse>,
}

impl OwnedSyn {
    fn build(edges: &[(u32, u32, f64)], n_src: usize, owned: impl Fn(u32) -> bool) -> Self {
        let mut syn: Vec<EpropSynapse> = edges
            .iter()
            .filter(|e| owned(e.1))
            .map(|&(s, t, w)| EpropSynapse {
                source: s,
                target: t,
                weight: w,
                ..Default::default()
            })
            .collect();
        syn.sort_by_key(|s| (s.source, s.target));
        let mut offsets = vec![0usize; n_src + 1];
        for s in &syn {
            offsets[s.source as usize + 1] += 1;
        }
        for i in 0..n_src {
            offsets[i + 1] += offsets[i];
        }
        OwnedSyn { offsets, syn }
    }
}

/// Per-step message slots, double-buffered by step parity.
struct Exchange {
    rec: [Vec<Mutex<Vec<u32>>>; 2],
    inp: [Vec<Mutex<Vec<u32>>>; 2],
    err: [Vec<Mutex<Vec<(u32, f64)>>>; 2],
}

impl Exchange {
    fn new(w: usize) -> Self {
        let slots = || (0..w).map(|_| Mutex::new(Vec::new())).collect::<Vec<_>>();
        let errs = || (0..w).map(|_| Mutex::new(Vec::new())).collect::<Vec<_>>();
        Exchange {
            rec: [slots(), slots()],
            inp: [slots(), slots()],
            err: [errs(), errs()],
        }
    }
}

fn gather(slots: &[Mutex<Vec<u32>>], out: &mut Vec<u32>) {
    out.clear();
    for s in slots {
        out.extend_from_slice(&s.lock().expect("exchange slot poisoned"));
    }
    // processing order must not depend on the partition
    out.sort_unstable();
}

struct WorkerOutput {
    spikes: Vec<(u32, i64)>,
    spikes_recurrent: u64,
    spikes_input: u64,
    weights: Vec<(u8, u32, u32, f64)>,
}

struct Worker<'a> {
    id: usize,
    w: usize,
    net: &'a ScalingNetwork,
    run: ScalingRun,
    lif: LifParams,
    kappa: f64,
    // owned neurons, indexed by j / w
    iaf: Vec<IgnoreAndFireState>,
    v: Vec<f64>,
    z: Vec<bool>,
    rate: Vec<f64>,
    drive: Vec<f64>,
    rec_arch: Vec<RecurrentArchive>,
    feedback: Vec<Vec<(u32, f64)>>,
    // owned readouts, indexed by k / w
    y: Vec<f64>,
    out_drive: Vec<f64>,
    out_arch: Vec<ReadoutArchive>,
    input: OwnedSyn,
    recurrent: OwnedSyn,
    output: OwnedSyn,
    gens: Vec<(u32, ChaCha8Rng)>,
}

const LS_LAG: i64 = 1;
const EMA_BETA: f64 = 0.999;

impl<'a> Worker<'a> {
    fn new(id: usize, w: usize, net: &'a ScalingNetwork, run: ScalingRun) -> Result<Self> {
        let p = &net.params;
        let own = move |x: u32| x as usize % w == id;
        let owned_rec: Vec<usize> = (id..p.n_rec).step_by(w).collect();
        let owned_out = (id..p.n_out).step_by(w).count();
        let surrogate = SurrogateSpec::new(SurrogateKind::PiecewiseLinear, 0.3, 1.0)?;
        let lif = LifParams::new(p.dt, 20.0, 0.6, 0.0, 1.0, ResetMode::SubtractThreshold, surrogate)?;
        let iaf = owned_rec
            .iter()
            .map(|&j| IgnoreAndFireState::new(net.period as i64, net.phases[j] as i64))
            .collect::<Result<Vec<_>>>()?;
        let mut feedback = vec![Vec::new(); owned_rec.len()];
        let mut fb: Vec<(u32, u32, f64)> = net.feedback.iter().copied().filter(|e| own(e.1)).collect();
        fb.sort_by_key(|e| (e.1, e.0));
        for (k, j, b) in fb {
            feedback[j as usize / w].push((k, b));
        }
        let mode = ArchiveMode::PerSpike {
            cutoff: run.cutoff as i64,
            lag: LS_LAG,
        };
        let out_mode = ArchiveMode::PerSpike {
            cutoff: run.cutoff as i64,
            lag: 0,
        };
        let input = OwnedSyn::build(&net.input, p.n_in, own);
        let recurrent = OwnedSyn::build(&net.recurrent, p.n_rec, own);
        let output = OwnedSyn::build(&net.output, p.n_rec, own);
        let mut rec_arch = vec![RecurrentArchive::new(mode); owned_rec.len()];
        let mut out_arch = vec![ReadoutArchive::new(out_mode); owned_out];
        if run.plastic {
            for s in input.syn.iter().chain(&recurrent.syn) {
                rec_arch[s.target as usize / w].updates.add(0);
            }
            for s in &output.syn {
                out_arch[s.target as usize / w].updates.add(0);
            }
        }
        let gens = (id..p.n_in)
            .step_by(w)
            .map(|g| {
                let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x5ca1_ab1e);
                rng.set_stream(g as u64);
                (g as u32, rng)
            })
            .collect();
        let n = owned_rec.len();
        Ok(Worker {
            id,
            w,
            net,
            run,
            kappa: (-p.dt / 20.0f64).exp(),
            lif,
            iaf,
            v: vec![0.0; n],
            z: vec![false; n],
            rate: vec![0.0; n],
            drive: vec![0.0; n],
            rec_arch,
            feedback,
            y: vec![0.0; owned_out],
            out_drive: vec![0.0; owned_out],
            out_arch,
            input,
            recurrent,
            output,
            gens,
        })
    }

    fn run(mut self, ex: &Exchange, barrier: &Barrier, samples: &[SampleRecord]) -> Result<WorkerOutput> {
        let p = self.net.params;
        let w = self.w;
        let plastic = self.run.plastic;
        let p_in = p.rate_hz * p.dt / 1000.0;
        let cx = Ctx {
            samples,
            opt: OptimizerConfig::adam(1e-4),
            cutoff: self.run.cutoff as i64,
            push: true,
        };
        let trace = TraceParams::new(
            &self.lif,
            0.0,
            RegKernel::Ema {
                coeff: 0.0,
                f_star: 0.0,
                beta: EMA_BETA,
            },
        );
        let out_trace = readout_params(self.kappa);
        let mut out = WorkerOutput {
            spikes: Vec::new(),
            spikes_recurrent: 0,
            spikes_input: 0,
            weights: Vec::new(),
        };
        let mut rec_prev = Vec::new();
        let mut in_prev = Vec::new();
        let mut err = vec![0.0; p.n_out];
        let mut dirty_rec = vec![false; self.rec_arch.len()];
        let mut dirty_out = vec![false; self.out_arch.len()];
        let mut failure: Option<EpropError> = None;

        for s in 1..=self.run.steps as i64 {
            let prev = ((s - 1) % 2) as usize;
            let cur = (s % 2) as usize;
            if failure.is_none() {
                let step = (|| -> Result<()> {
                    gather(&ex.rec[prev], &mut rec_prev);
                    gather(&ex.inp[prev], &mut in_prev);
                    if plastic && s >= 3 {
                        // errors published at s - 1 belong to recurrent step s - 2
                        err.iter_mut().for_each(|e| *e = 0.0);
                        for slot in &ex.err[prev] {
                            for &(k, e) in slot.lock().expect("exchange slot poisoned").iter() {
                                err[k as usize] = e;
                            }
                        }
                        for (i, a) in self.rec_arch.iter_mut().enumerate() {
                            let l: f64 = self.feedback[i].iter().map(|&(k, b)| b * err[k as usize]).sum();
                            a.write_l(s - 2, l)?;
                        }
                    }

                    self.drive.iter_mut().for_each(|x| *x = 0.0);
                    self.out_drive.iter_mut().for_each(|x| *x = 0.0);
                    for (proj, spikes) in [(&mut self.input, &in_prev), (&mut self.recurrent, &rec_prev)] {
                        for &src in spikes.iter() {
                            for syn in &mut proj.syn[proj.offsets[src as usize]..proj.offsets[src as usize + 1]] {
                                let i = syn.target as usize / w;
                                if plastic {
                                    let arch = &mut self.rec_arch[i];
                                    dirty_rec[i] |= arrival_per_spike(syn, arch, &trace, s - 1 - LS_LAG, Some(s), &cx)?;
                                }
                                self.drive[i] += syn.weight;
                            }
                        }
                    }
                    let proj = &mut self.output;
                    for &src in rec_prev.iter() {
                        for syn in &mut proj.syn[proj.offsets[src as usize]..proj.offsets[src as usize + 1]] {
                            let i = syn.target as usize / w;
                            if plastic {
                                let arch = &mut self.out_arch[i];
                                dirty_out[i] |= arrival_per_spike(syn, arch, &out_trace, s - 1, Some(s), &cx)?;
                            }
                            self.out_drive[i] += syn.weight;
                        }
                    }

                    // neuron updates
                    let mut spikes = ex.rec[cur][self.id].lock().expect("exchange slot poisoned");
                    spikes.clear();
                    let alpha = self.lif.alpha;
                    let v_th = self.lif.v_th;
                    for i in 0..self.iaf.len() {
                        let j = (self.id + i * w) as u32;
                        let zp = if self.z[i] { v_th } else { 0.0 };
                        self.v[i] = alpha * self.v[i] + self.drive[i] - zp;
                        let (st, z) = step_ignore_and_fire(self.iaf[i]);
                        self.iaf[i] = st;
                        self.z[i] = z;
                        if z {
                            spikes.push(j);
                            out.spikes_recurrent += 1;
                            if self.run.record_spikes {
                                out.spikes.push((j, s));
                            }
                        }
                        if plastic {
                            let psi = surrogate_gradient(self.v[i], v_th, &self.lif.surrogate);
                            self.rate[i] = ema_rate_step(self.rate[i], if z { 1.0 } else { 0.0 }, EMA_BETA);
                            let a = &mut self.rec_arch[i];
                            a.append_entry(s)?;
                            a.write_psi(s, psi, self.rate[i])?;
                        }
                    }
                    drop(spikes);

                    let mut errs = ex.err[cur][self.id].lock().expect("exchange slot poisoned");
                    errs.clear();
                    for i in 0..self.y.len() {
                        let k = self.id + i * w;
                        self.y[i] = self.kappa * self.y[i] + self.out_drive[i];
                        if plastic {
                            let target = (2.0 * std::f64::consts::PI * (s as f64 * p.dt / 1000.0) + k as f64).sin();
                            let e = self.y[i] - target;
                            self.out_arch[i].append_entry(s)?;
                            self.out_arch[i].write_e(s, e)?;
                            errs.push((k as u32, e));
                        }
                    }
                    drop(errs);

                    let mut inp = ex.inp[cur][self.id].lock().expect("exchange slot poisoned");
                    inp.clear();
                    for (g, rng) in &mut self.gens {
                        if rng.random::<f64>() < p_in {
                            inp.push(*g);
                        }
                    }
                    out.spikes_input += inp.len() as u64;
                    drop(inp);

                    if plastic {
                        // trim moved fronts every step, full sweep once per cutoff
                        let sweep = s % self.run.cutoff as i64 == 0;
                        for (a, d) in self.rec_arch.iter_mut().zip(dirty_rec.iter_mut()) {
                            if sweep {
                                a.erase_used_history(s);
                            } else if std::mem::take(d) {
                                a.erase_front();
                            }
                        }
                        for (a, d) in self.out_arch.iter_mut().zip(dirty_out.iter_mut()) {
                            if sweep {
                                a.erase_used_history(s);
                            } else if std::mem::take(d) {
                                a.erase_front();
                            }
                        }
                        if sweep {
                            dirty_rec.iter_mut().for_each(|d| *d = false);
                            dirty_out.iter_mut().for_each(|d| *d = false);
                        }
                    }
                    Ok(())
                })();
                if let Err(e) = step {
                    failure = Some(e);
                }
            }
            // every worker must reach the barrier, even after a failure
            barrier.wait();
        }
        if let Some(e) = failure {
            return Err(e);
        }
        for (tag, proj) in [(0u8, &self.input), (1, &self.recurrent), (2, &self.output)] {
            out.weights.extend(proj.syn.iter().map(|s| (tag, s.source, s.target, s.weight)));
        }
        Ok(out)
    }
}

fn spike_hash(spikes: &mut [(u32, i64)]) -> u64 {
    spikes.sort_unstable_by_key(|&(n, t)| (t, n));
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &(n, t) in spikes.iter() {
        for word in [n as u64, t as u64] {
            h ^= word;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Simulate `run.steps` steps with `run.workers` threads. Only the step
/// loop is timed; building the per-worker state is excluded.
pub fn run_scaling(net: &ScalingNetwork, run: &ScalingRun) -> Result<(ScalingReport, Vec<(u32, i64)>)> {
    if run.workers == 0 {
        return Err(EpropError::InvalidConfig("at least one worker is required".into()));
    }
    if run.plastic && run.cutoff as i64 <= LS_LAG {
        return Err(EpropError::InvalidConfig(format!("cutoff must exceed {LS_LAG}")));
    }
    let p = net.params;
    let w = run.workers;
    let workers = (0..w)
        .map(|id| Worker::new(id, w, net, *run))
        .collect::<Result<Vec<_>>>()?;
    let samples = [SampleRecord {
        start: 0,
        duration: run.steps as i64,
        slot: run.steps as i64,
        plastic: true,
        iteration_end: false,
        scale: 1.0,
        kernel: RegKernel::Off,
    }];
    let ex = Exchange::new(w);
    let barrier = Barrier::new(w);
    let clock = Instant::now();
    let outputs: Vec<Result<WorkerOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = workers
            .into_iter()
            .map(|wk| {
                let (ex, barrier, samples) = (&ex, &barrier, &samples);
                scope.spawn(move || wk.run(ex, barrier, samples))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(EpropError::Protocol("worker panicked".into()))))
            .collect()
    });
    let runtime_s = clock.elapsed().as_secs_f64();
    let mut spikes = Vec::new();
    let mut weights = Vec::new();
    let (mut n_rec_spikes, mut n_in_spikes) = (0, 0);
    for o in outputs {
        let o = o?;
        spikes.extend(o.spikes);
        weights.extend(o.weights);
        n_rec_spikes += o.spikes_recurrent;
        n_in_spikes += o.spikes_input;
    }
    weights.sort_by_key(|&(tag, s, t, _)| (tag, s, t));
    let snap = WeightSnapshot {
        input: weights.iter().filter(|x| x.0 == 0).map(|x| (x.1, x.2, x.3)).collect(),
        recurrent: weights.iter().filter(|x| x.0 == 1).map(|x| (x.1, x.2, x.3)).collect(),
        output: weights.iter().filter(|x| x.0 == 2).map(|x| (x.1, x.2, x.3)).collect(),
    };
    let simulated_s = run.steps as f64 * p.dt / 1000.0;
    let report = ScalingReport {
        workers: w,
        plastic: run.plastic,
        n_rec: p.n_rec,
        synapses: net.synapse_count(),
        steps: run.steps,
        simulated_s,
        runtime_s,
        real_time_factor: simulated_s / runtime_s.max(f64::MIN_POSITIVE),
        spikes_recurrent: n_rec_spikes,
        spikes_input: n_in_spikes,
        recurrent_rate_hz: n_rec_spikes as f64 / p.n_rec.max(1) as f64 / simulated_s,
        input_rate_hz: n_in_spikes as f64 / p.n_in.max(1) as f64 / simulated_s,
        spike_hash: if run.record_spikes { spike_hash(&mut spikes) } else { 0 },
        weight_checksum: snap.checksum(),
    };
    Ok((report, spikes))
}
