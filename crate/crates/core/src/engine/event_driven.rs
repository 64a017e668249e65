//! Event-driven runner: neurons archive psi, f, L (recurrent) and E
//! (readouts); synapses replay the archive only when a spike arrives.

use std::collections::VecDeque;

use crate::config::UpdateKind;
use crate::error::{EpropError, Result};
use crate::history::{ArchiveMode, EpropHistory, HistoryEntry, ReadoutHistoryEntry, RecurrentHistoryEntry};
use crate::neuron::surrogate_gradient;
use crate::optim::OptimizerConfig;
use crate::plasticity::{EligibilityState, RegKernel, TraceParams};
use crate::sample::SampleSpec;
use crate::signals::{loss_and_error_into, LossKind};

use super::time_driven::{integrate_recurrent, PredictionAcc};
use super::{EpropSynapse, EventState, Network, RecordLevel, SampleRecord, SampleResult};

/// How a synapse consumes one archived entry.
pub(crate) trait Replay: HistoryEntry {
    fn replay(&self, elig: &mut EligibilityState, z: f64, psi_prev: &mut f64, t: usize, p: &TraceParams) -> f64;
}

impl Replay for RecurrentHistoryEntry {
    #[inline]
    fn replay(&self, elig: &mut EligibilityState, z: f64, psi_prev: &mut f64, t: usize, p: &TraceParams) -> f64 {
        let g = elig.advance(z, *psi_prev, self.psi, self.l, self.f, t, p);
        *psi_prev = self.psi;
        g
    }
}

impl Replay for ReadoutHistoryEntry {
    #[inline]
    fn replay(&self, elig: &mut EligibilityState, z: f64, _psi_prev: &mut f64, _t: usize, p: &TraceParams) -> f64 {
        elig.output_step(z, self.e, p.filter)
    }
}

/// Trace constants for synapses onto a readout: only the filter is used.
pub(crate) fn readout_params(kappa: f64) -> TraceParams {
    TraceParams {
        alpha: 0.0,
        rho: 0.0,
        beta_a: 0.0,
        filter: kappa,
        reg: RegKernel::Off,
    }
}

pub(crate) fn sample_index(samples: &[SampleRecord], t: i64) -> Option<usize> {
    let i = samples.partition_point(|r| r.start < t);
    (i > 0)
        .then(|| i - 1)
        .filter(|&i| t <= samples[i].start + samples[i].slot)
}

/// Number of steps in `(a, b]` that belong to plastic samples.
fn plastic_steps(samples: &[SampleRecord], a: i64, b: i64) -> u64 {
    let first = samples.partition_point(|r| r.start + r.slot <= a);
    let mut n = 0;
    for r in &samples[first..] {
        if r.start >= b {
            break;
        }
        if r.plastic {
            let lo = a.max(r.start);
            let hi = b.min(r.start + r.slot);
            n += (hi - lo).max(0) as u64;
        }
    }
    n
}

#[inline]
fn take_arrival(arrivals: &mut VecDeque<i64>, t: i64) -> f64 {
    if arrivals.front() == Some(&t) {
        arrivals.pop_front();
        1.0
    } else {
        0.0
    }
}

pub(crate) struct Ctx<'a> {
    pub samples: &'a [SampleRecord],
    pub opt: OptimizerConfig,
    pub cutoff: i64,
    /// False while frozen: gradients accumulate, weights stay.
    pub push: bool,
}

/// Account for every sample before `upto` (per-iteration updates).
fn catch_up<E: Replay>(
    syn: &mut EpropSynapse,
    arch: &EpropHistory<E>,
    params: &dyn Fn(RegKernel) -> TraceParams,
    shift: i64,
    upto: usize,
    cx: &Ctx,
) -> Result<()> {
    for k in syn.next_sample..upto {
        let r = &cx.samples[k];
        if !r.plastic {
            continue;
        }
        if syn.pending == Some(k) {
            syn.elig.reset_traces();
            let p = params(r.kernel);
            let (elig, opt, arrivals) = (&mut syn.elig, &mut syn.opt, &mut syn.arrivals);
            let mut psi_prev = 0.0;
            let mut t = 0usize;
            arch.for_range(r.start + shift, r.start + shift + r.duration, |e| {
                t += 1;
                let z = take_arrival(arrivals, e.t());
                let g = e.replay(elig, z, &mut psi_prev, t, &p);
                if cx.push {
                    opt.push(g, r.scale, &cx.opt);
                }
            })?;
            if !syn.arrivals.is_empty() {
                return Err(EpropError::Protocol(format!(
                    "spike arrivals outside the window of sample {k}"
                )));
            }
            syn.pending = None;
        } else if cx.push {
            syn.opt.push_zeros(r.duration as u64, &cx.opt, false);
        }
        if r.iteration_end && cx.push {
            syn.weight = syn.opt.apply(syn.weight, r.scale, &cx.opt);
        }
    }
    syn.next_sample = syn.next_sample.max(upto);
    Ok(())
}

fn move_registration<E: HistoryEntry>(syn: &mut EpropSynapse, arch: &mut EpropHistory<E>, to: i64) -> Result<bool> {
    if to == syn.t_reg {
        return Ok(false);
    }
    arch.register_update(syn.t_reg, to)?;
    syn.t_reg = to;
    Ok(true)
}

/// Spike arrival at step `s` in sample `m` under per-iteration updates.
fn arrival_per_iteration<E: Replay>(
    syn: &mut EpropSynapse,
    arch: &mut EpropHistory<E>,
    params: &dyn Fn(RegKernel) -> TraceParams,
    shift: i64,
    s: i64,
    m: usize,
    cx: &Ctx,
) -> Result<bool> {
    catch_up(syn, arch, params, shift, m, cx)?;
    let r = &cx.samples[m];
    let to = if r.plastic {
        syn.pending = Some(m);
        syn.arrivals.push_back(s);
        r.start + shift
    } else {
        r.start + r.slot + shift
    };
    move_registration(syn, arch, to)
}

/// Replay the archive up to `end` (bounded by the cutoff), apply the
/// accumulated change and queue the arrival `s`, if any (per-spike updates).
pub(crate) fn arrival_per_spike<E: Replay>(
    syn: &mut EpropSynapse,
    arch: &mut EpropHistory<E>,
    p: &TraceParams,
    end: i64,
    s: Option<i64>,
    cx: &Ctx,
) -> Result<bool> {
    let end = end.max(syn.t_reg);
    let stop = end.min(syn.t_reg + cx.cutoff);
    {
        let (elig, opt, arrivals) = (&mut syn.elig, &mut syn.opt, &mut syn.arrivals);
        let psi_prev = &mut syn.psi_prev;
        // the sample covering the last visited step, reused while the range stays inside it
        let mut within = (i64::MAX, i64::MIN, false);
        arch.for_range(syn.t_reg, stop, |e| {
            let t = e.t();
            let z = take_arrival(arrivals, t);
            let g = e.replay(elig, z, psi_prev, 1, p);
            if cx.push {
                if !(within.0 < t && t <= within.1) {
                    within = match sample_index(cx.samples, t) {
                        Some(i) => {
                            let r = &cx.samples[i];
                            (r.start, r.start + r.slot, r.plastic)
                        }
                        None => (i64::MAX, i64::MIN, false),
                    };
                }
                if within.2 {
                    opt.push(g, 1.0, &cx.opt);
                }
            }
        })?;
    }
    if end > stop {
        if !syn.arrivals.is_empty() {
            return Err(EpropError::Protocol("spike arrival beyond the trace cutoff".into()));
        }
        syn.elig.decay_silent((end - stop) as u64, p);
        if cx.push {
            let n = plastic_steps(cx.samples, stop, end);
            syn.opt.push_zeros(n, &cx.opt, true);
        }
        syn.psi_prev = 0.0;
    }
    let moved = move_registration(syn, arch, end)?;
    if cx.push {
        syn.weight = syn.opt.apply(syn.weight, 1.0, &cx.opt);
    }
    if let Some(s) = s {
        syn.arrivals.push_back(s);
    }
    Ok(moved)
}

impl Network {
    pub(crate) fn run_event_driven(&mut self, sample: &SampleSpec, idx: usize) -> Result<SampleResult> {
        let mut ed = self
            .ed
            .take()
            .ok_or_else(|| EpropError::InvalidConfig("network was not built for event-driven mode".into()))?;
        let out = self.event_loop(&mut ed, sample, idx);
        self.ed = Some(ed);
        out
    }

    fn event_loop(&mut self, ed: &mut EventState, sample: &SampleSpec, idx: usize) -> Result<SampleResult> {
        let rec = self.samples[idx];
        let t_len = rec.duration;
        let per_spike = self.cfg.policy.kind == UpdateKind::PerSpike;
        let reset = self.cfg.reset_between_samples;
        let d = self.cfg.delays.d as i64;
        let d_ls = self.cfg.delays.d_ls as i64;
        let d_sm = self.cfg.loss.exchange_latency();
        let d_sync = self.cfg.d_sync();
        let cutoff = self.cfg.delays.cutoff as i64;
        let kappa = self.kappa;
        let filter = self.filter;
        let loss_kind = self.cfg.loss;
        let j_n = self.cfg.n_rec();
        let grid = sample.spikes_by_step();
        let kernel = rec.kernel;
        let is_static = matches!(kernel, RegKernel::Static { .. });

        if idx == 0 && !per_spike {
            for a in &mut ed.rec_archives {
                a.mode = ArchiveMode::FixedInterval {
                    update_interval: rec.slot,
                    shift: 0,
                };
            }
            for a in &mut ed.out_archives {
                a.mode = ArchiveMode::FixedInterval {
                    update_interval: rec.slot,
                    shift: d,
                };
            }
        }
        let rec_params: Vec<TraceParams> = (0..j_n)
            .map(|j| TraceParams::new(self.cfg.params_of(j), filter, kernel))
            .collect();
        let lifs: Vec<_> = (0..j_n).map(|j| *self.cfg.params_of(j)).collect();
        let out_params = readout_params(kappa);

        let mut result = SampleResult::default();
        let mut pred = PredictionAcc::new(self.cfg.n_out);
        let mut counts = vec![0u64; if is_static { j_n } else { 0 }];
        let mut spikes: Vec<u32> = Vec::new();
        let mut src: Vec<u32> = Vec::new();

        for u in 1..=rec.slot {
            let s = rec.start + u;
            if u == 1 {
                if reset {
                    self.reset_dynamics();
                }
                if !per_spike {
                    ed.rec_archives.iter_mut().for_each(|a| a.erase_used_history(s));
                    ed.out_archives.iter_mut().for_each(|a| a.erase_used_history(s));
                }
            }
            let idle = reset && u > t_len;

            // recurrent-population arrivals: inputs, then recurrent spikes of s - 1
            self.in_drive.iter_mut().for_each(|x| *x = 0.0);
            self.rec_drive.iter_mut().for_each(|x| *x = 0.0);
            if !idle {
                let cx = Ctx {
                    samples: &self.samples,
                    opt: self.cfg.optimizer,
                    cutoff,
                    push: !self.frozen,
                };
                let empty = Vec::new();
                let row = if u <= t_len { &grid[(u - 1) as usize] } else { &empty };
                src.clear();
                if let Some((t, z)) = ed.emitted.back() {
                    // a reset discards spikes emitted before the sample start
                    if *t == s - 1 && !(reset && u == 1) {
                        src.extend_from_slice(z);
                    }
                }
                for (proj, drive, sources) in [
                    (&mut self.input, &mut self.in_drive, row.as_slice()),
                    (&mut self.recurrent, &mut self.rec_drive, src.as_slice()),
                ] {
                    for &i in sources {
                        for k in proj.outgoing(i as usize) {
                            let syn = &mut proj.syn[k];
                            let tgt = syn.target as usize;
                            if proj.plastic {
                                let arch = &mut ed.rec_archives[tgt];
                                let moved = if per_spike {
                                    arrival_per_spike(syn, arch, &rec_params[tgt], s - 1 - d_sync, Some(s), &cx)?
                                } else {
                                    let lif = &lifs[tgt];
                                    let params = |k: RegKernel| TraceParams::new(lif, filter, k);
                                    arrival_per_iteration(syn, arch, &params, 0, s, idx, &cx)?
                                };
                                ed.dirty_rec[tgt] |= moved;
                            }
                            drive[tgt] += syn.weight;
                        }
                    }
                }
            }

            // recurrent update and archiving
            spikes.clear();
            if idle {
                for a in &mut ed.rec_archives {
                    a.append_entry(s)?;
                }
            } else {
                integrate_recurrent(
                    &self.cfg,
                    &mut self.rec,
                    &self.rec_drive,
                    &self.in_drive,
                    &self.forced,
                    s,
                    &mut spikes,
                )?;
                for j in 0..j_n {
                    let st = &self.rec[j];
                    let psi = surrogate_gradient(st.v, st.v_th_t, &lifs[j].surrogate);
                    self.rate[j] = kernel.rate_step(self.rate[j], st.z_f64(), u as usize);
                    let a = &mut ed.rec_archives[j];
                    a.append_entry(s)?;
                    a.write_psi(s, psi, self.rate[j])?;
                }
                if is_static {
                    for &j in &spikes {
                        counts[j as usize] += 1;
                    }
                    if u == t_len {
                        for (j, &c) in counts.iter().enumerate() {
                            ed.rec_archives[j].write_f_range(rec.start, rec.start + t_len, c as f64 / t_len as f64)?;
                        }
                    }
                }
            }
            result.spikes_recurrent += spikes.len() as u64;
            if self.record != RecordLevel::None {
                result.raster.extend(spikes.iter().map(|&j| (j, s)));
            }
            ed.emitted.push_back((s, spikes.clone()));
            while ed.emitted.front().is_some_and(|(t, _)| *t < s - d.max(1)) {
                ed.emitted.pop_front();
            }

            // readout arrivals: recurrent spikes emitted at s - d
            self.out_drive.iter_mut().for_each(|x| *x = 0.0);
            src.clear();
            if let Some((_, z)) = ed.emitted.iter().find(|(t, _)| *t == s - d) {
                src.extend_from_slice(z);
            }
            {
                let cx = Ctx {
                    samples: &self.samples,
                    opt: self.cfg.optimizer,
                    cutoff,
                    push: !self.frozen,
                };
                let proj = &mut self.output;
                for &i in &src {
                    for k in proj.outgoing(i as usize) {
                        let syn = &mut proj.syn[k];
                        let tgt = syn.target as usize;
                        if proj.plastic {
                            let arch = &mut ed.out_archives[tgt];
                            let moved = if per_spike {
                                arrival_per_spike(syn, arch, &out_params, s - 1 - d_sm, Some(s), &cx)?
                            } else {
                                let params = |_: RegKernel| out_params;
                                arrival_per_iteration(syn, arch, &params, d, s, idx, &cx)?
                            };
                            ed.dirty_out[tgt] |= moved;
                        }
                        self.out_drive[tgt] += syn.weight;
                    }
                }
            }

            // readout update, error and learning signal
            if reset && u == d + 1 {
                self.y.iter_mut().for_each(|y| *y = 0.0);
            }
            self.y_prev.copy_from_slice(&self.y);
            for (y, dr) in self.y.iter_mut().zip(&self.out_drive) {
                *y = kappa * *y + dr;
            }
            for a in &mut ed.out_archives {
                a.append_entry(s)?;
            }
            let (t_e, at) = match loss_kind {
                LossKind::CrossEntropySoftmax => (u - d - 1, s - 1),
                LossKind::Mse | LossKind::TemporalMse => (u - d, s),
            };
            if (1..=t_len).contains(&t_e) {
                let row = (t_e - 1) as usize;
                let window = sample.target.window[row];
                let y_src = if loss_kind == LossKind::CrossEntropySoftmax {
                    &self.y_prev
                } else {
                    &self.y
                };
                result.loss += loss_and_error_into(
                    loss_kind,
                    y_src,
                    &sample.target.values[row],
                    window,
                    &mut self.err,
                    &mut self.scratch,
                )?;
                if window {
                    if loss_kind == LossKind::CrossEntropySoftmax {
                        pred.add(&self.scratch);
                    } else {
                        pred.add(y_src);
                    }
                }
                for (k, a) in ed.out_archives.iter_mut().enumerate() {
                    a.write_e(at, self.err[k])?;
                }
                self.feedback.learning_signal_into(&self.err, &mut self.l);
                ed.pending_l.push_back((s + d_ls, rec.start + t_e, self.l.clone()));
            }

            // learning signals due now
            while ed.pending_l.front().is_some_and(|(due, _, _)| *due <= s) {
                let (_, t, l) = ed.pending_l.pop_front().expect("checked non-empty");
                for (j, a) in ed.rec_archives.iter_mut().enumerate() {
                    a.write_l(t, l[j])?;
                }
            }

            if per_spike {
                let sweep = s % cutoff == 0;
                for (a, dirty) in ed.rec_archives.iter_mut().zip(ed.dirty_rec.iter_mut()) {
                    if *dirty || sweep {
                        a.erase_used_history(s);
                        *dirty = false;
                    }
                }
                for (a, dirty) in ed.out_archives.iter_mut().zip(ed.dirty_out.iter_mut()) {
                    if *dirty || sweep {
                        a.erase_used_history(s);
                        *dirty = false;
                    }
                }
            }
        }
        if !ed.pending_l.is_empty() {
            return Err(EpropError::Protocol("learning signals left in flight at sample end".into()));
        }
        result.prediction = pred.finish();
        Ok(result)
    }

    /// Bring every synapse up to date with the archives so that all pending
    /// weight changes are applied.
    pub(crate) fn flush_event_driven(&mut self) -> Result<()> {
        let Some(last) = self.samples.last().copied() else {
            return Ok(());
        };
        let mut ed = self
            .ed
            .take()
            .ok_or_else(|| EpropError::InvalidConfig("network was not built for event-driven mode".into()))?;
        let out = self.flush_with(&mut ed, last);
        self.ed = Some(ed);
        out
    }

    fn flush_with(&mut self, ed: &mut EventState, last: SampleRecord) -> Result<()> {
        let per_spike = self.cfg.policy.kind == UpdateKind::PerSpike;
        let now = self.now;
        let n = self.samples.len();
        let d = self.cfg.delays.d as i64;
        let filter = self.filter;
        let out_params = readout_params(self.kappa);
        let lifs: Vec<_> = (0..self.cfg.n_rec()).map(|j| *self.cfg.params_of(j)).collect();
        let cx = Ctx {
            samples: &self.samples,
            opt: self.cfg.optimizer,
            cutoff: self.cfg.delays.cutoff as i64,
            push: !self.frozen,
        };
        let (input, recurrent, output) = (&mut self.input, &mut self.recurrent, &mut self.output);
        for proj in [input, recurrent] {
            if !proj.plastic {
                continue;
            }
            for syn in &mut proj.syn {
                let tgt = syn.target as usize;
                let arch = &mut ed.rec_archives[tgt];
                let lif = &lifs[tgt];
                let params = |k: RegKernel| TraceParams::new(lif, filter, k);
                let moved = if per_spike {
                    arrival_per_spike(syn, arch, &params(last.kernel), now, None, &cx)?
                } else {
                    catch_up(syn, arch, &params, 0, n, &cx)?;
                    move_registration(syn, arch, now)?
                };
                ed.dirty_rec[tgt] |= moved;
            }
        }
        if output.plastic {
            for syn in &mut output.syn {
                let tgt = syn.target as usize;
                let arch = &mut ed.out_archives[tgt];
                let params = |_: RegKernel| out_params;
                let moved = if per_spike {
                    arrival_per_spike(syn, arch, &out_params, now, None, &cx)?
                } else {
                    catch_up(syn, arch, &params, d, n, &cx)?;
                    move_registration(syn, arch, now + d)?
                };
                ed.dirty_out[tgt] |= moved;
            }
        }
        if per_spike {
            for (a, dirty) in ed.rec_archives.iter_mut().zip(ed.dirty_rec.iter_mut()) {
                if std::mem::take(dirty) {
                    a.erase_used_history(now);
                }
            }
            for (a, dirty) in ed.out_archives.iter_mut().zip(ed.dirty_out.iter_mut()) {
                if std::mem::take(dirty) {
                    a.erase_used_history(now);
                }
            }
        }
        Ok(())
    }
}
