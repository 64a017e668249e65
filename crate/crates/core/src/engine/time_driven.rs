//! Time-driven reference: every synapse is updated at every step with
//! zero-latency readouts and learning signals.

use crate::config::{NetworkConfig, UpdateKind};
use crate::error::{EpropError, Result};
use crate::neuron::{step_recurrent_unchecked, surrogate_gradient, RecurrentNeuronState};
use crate::plasticity::RegKernel;
use crate::sample::SampleSpec;
use crate::signals::{argmax_first, loss_and_error_into, LossKind};

use super::{Network, Projection, RecordLevel, SampleResult, StepTrace};

/// `drive[target] += w` for every outgoing synapse of the spiking sources.
pub(crate) fn accumulate_drive(proj: &Projection, spikes: &[u32], drive: &mut [f64]) {
    for &src in spikes {
        for syn in &proj.syn[proj.outgoing(src as usize)] {
            drive[syn.target as usize] += syn.weight;
        }
    }
}

/// Advance every recurrent neuron by one step, honoring forced spikes at
/// global step `s`. Spiking neurons are appended to `spikes` in ascending order.
pub(crate) fn integrate_recurrent(
    cfg: &NetworkConfig,
    states: &mut [RecurrentNeuronState],
    rec_drive: &[f64],
    in_drive: &[f64],
    forced: &[(usize, i64)],
    s: i64,
    spikes: &mut Vec<u32>,
) -> Result<()> {
    for (j, st) in states.iter_mut().enumerate() {
        let p = cfg.params_of(j);
        let mut next = step_recurrent_unchecked(st, p, rec_drive[j], in_drive[j]);
        if !next.z && forced.iter().any(|&(n, t)| n == j && t == s) {
            let extra = (next.v_th_t - next.v).max(0.0) + 1e-9;
            next = step_recurrent_unchecked(st, p, rec_drive[j], in_drive[j] + extra);
        }
        if !next.v.is_finite() {
            return Err(EpropError::NonFinite("membrane voltage"));
        }
        *st = next;
        if next.z {
            spikes.push(j as u32);
        }
    }
    Ok(())
}

/// Sums needed for the sample's prediction.
#[derive(Default)]
pub(crate) struct PredictionAcc {
    sums: Vec<f64>,
    steps: usize,
}

impl PredictionAcc {
    pub fn new(n: usize) -> Self {
        PredictionAcc {
            sums: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn add(&mut self, v: &[f64]) {
        for (s, x) in self.sums.iter_mut().zip(v) {
            *s += x;
        }
        self.steps += 1;
    }

    pub fn finish(&self) -> Option<usize> {
        (self.steps > 0).then(|| {
            let mean: Vec<f64> = self.sums.iter().map(|s| s / self.steps as f64).collect();
            argmax_first(&mean)
        })
    }
}

impl Network {
    /// Spike counts of one sample's recurrent window, simulated on a copy of
    /// the current state with the current weights.
    fn presimulate_counts(&self, grid: &[Vec<u32>], start: i64, reset: bool) -> Result<Vec<u64>> {
        let j = self.cfg.n_rec();
        let mut states: Vec<RecurrentNeuronState> = if reset {
            (0..j).map(|n| RecurrentNeuronState::rest(self.cfg.params_of(n))).collect()
        } else {
            self.rec.clone()
        };
        let mut counts = vec![0u64; j];
        let mut in_drive = vec![0.0; j];
        let mut rec_drive = vec![0.0; j];
        let mut prev: Vec<u32> = states.iter().enumerate().filter(|(_, s)| s.z).map(|(n, _)| n as u32).collect();
        let mut now = Vec::new();
        for (u, row) in grid.iter().enumerate() {
            in_drive.iter_mut().for_each(|x| *x = 0.0);
            rec_drive.iter_mut().for_each(|x| *x = 0.0);
            accumulate_drive(&self.input, row, &mut in_drive);
            accumulate_drive(&self.recurrent, &prev, &mut rec_drive);
            now.clear();
            integrate_recurrent(
                &self.cfg,
                &mut states,
                &rec_drive,
                &in_drive,
                &self.forced,
                start + u as i64 + 1,
                &mut now,
            )?;
            for &n in &now {
                counts[n as usize] += 1;
            }
            std::mem::swap(&mut prev, &mut now);
        }
        Ok(counts)
    }

    pub(crate) fn run_time_driven(&mut self, sample: &SampleSpec, idx: usize) -> Result<SampleResult> {
        let rec = self.samples[idx];
        let t_len = rec.duration;
        let reset = self.cfg.reset_between_samples;
        let per_spike = self.cfg.policy.kind == UpdateKind::PerSpike;
        let learn = rec.plastic || self.frozen;
        let push = rec.plastic && !self.frozen;
        // with resets every sample starts from zero traces, so eval samples
        // need no gradient bookkeeping at all
        let track = learn || !reset;
        let j_n = self.cfg.n_rec();
        let k_n = self.cfg.n_out;
        let n_in = self.cfg.n_in;
        let kappa = self.kappa;
        let opt = self.cfg.optimizer;
        let loss_kind = self.cfg.loss;
        let grid = sample.spikes_by_step();

        if reset {
            self.reset_dynamics();
            for p in [&mut self.input, &mut self.recurrent, &mut self.output] {
                for s in &mut p.syn {
                    s.elig.reset_traces();
                }
            }
        }
        let static_rate = match rec.kernel {
            RegKernel::Static { .. } if track => {
                let counts = self.presimulate_counts(&grid, rec.start, reset)?;
                Some(counts.iter().map(|&c| c as f64 / t_len as f64).collect::<Vec<f64>>())
            }
            _ => None,
        };
        let params: Vec<_> = (0..j_n).map(|j| self.trace_params(j, rec.kernel)).collect();

        let mut result = SampleResult::default();
        let mut trace = (self.record == RecordLevel::Full).then(StepTrace::default);
        let mut pred = PredictionAcc::new(k_n);
        let mut x_now = vec![false; n_in];
        let mut z_prev: Vec<bool> = self.rec.iter().map(|s| s.z).collect();
        let mut prev_spikes: Vec<u32> = (0..j_n as u32).filter(|&j| z_prev[j as usize]).collect();
        let mut spikes: Vec<u32> = Vec::new();
        let mut z_now = vec![false; j_n];
        let empty: Vec<u32> = Vec::new();

        for u in 1..=rec.slot {
            let s = rec.start + u;
            if reset && u > t_len {
                continue;
            }
            let in_window = u <= t_len;
            let row = if in_window { &grid[(u - 1) as usize] } else { &empty };

            self.in_drive.iter_mut().for_each(|x| *x = 0.0);
            self.rec_drive.iter_mut().for_each(|x| *x = 0.0);
            accumulate_drive(&self.input, row, &mut self.in_drive);
            accumulate_drive(&self.recurrent, &prev_spikes, &mut self.rec_drive);
            spikes.clear();
            integrate_recurrent(
                &self.cfg,
                &mut self.rec,
                &self.rec_drive,
                &self.in_drive,
                &self.forced,
                s,
                &mut spikes,
            )?;
            z_now.iter_mut().for_each(|z| *z = false);
            for &j in &spikes {
                z_now[j as usize] = true;
            }
            for j in 0..j_n {
                let st = &self.rec[j];
                let p = self.cfg.params_of(j);
                self.psi[j] = surrogate_gradient(st.v, st.v_th_t, &p.surrogate);
                self.rate[j] = match &static_rate {
                    Some(f) => f[j],
                    None => rec.kernel.rate_step(self.rate[j], st.z_f64(), u as usize),
                };
            }
            result.spikes_recurrent += spikes.len() as u64;
            if self.record != RecordLevel::None {
                result.raster.extend(spikes.iter().map(|&j| (j, s)));
            }

            // readout, loss and learning signal, all at the same step
            self.out_drive.iter_mut().for_each(|x| *x = 0.0);
            accumulate_drive(&self.output, &spikes, &mut self.out_drive);
            for (y, d) in self.y.iter_mut().zip(&self.out_drive) {
                *y = kappa * *y + d;
            }
            let window = in_window && sample.target.window[(u - 1) as usize];
            if in_window {
                result.loss += loss_and_error_into(
                    loss_kind,
                    &self.y,
                    &sample.target.values[(u - 1) as usize],
                    window,
                    &mut self.err,
                    &mut self.scratch,
                )?;
                if window {
                    if loss_kind == LossKind::CrossEntropySoftmax {
                        pred.add(&self.scratch);
                    } else {
                        pred.add(&self.y);
                    }
                }
            } else {
                self.err.iter_mut().for_each(|e| *e = 0.0);
            }
            self.feedback.learning_signal_into(&self.err, &mut self.l);

            if let Some(tr) = trace.as_mut().filter(|_| in_window) {
                x_now.iter_mut().for_each(|x| *x = false);
                for &i in row {
                    x_now[i as usize] = true;
                }
                tr.psi.push(self.psi.clone());
                tr.z.push(z_now.clone());
                tr.x.push(x_now.clone());
                tr.l.push(self.l.clone());
                tr.y.push(self.y.clone());
                tr.err.push(self.err.clone());
                tr.f.push(self.rate.clone());
            }

            if track {
                let t_arg = u as usize;
                let scale = if per_spike { 1.0 } else { rec.scale };
                let push_in = push && self.input.plastic;
                let push_rec = push && self.recurrent.plastic;
                let push_out = push && self.output.plastic;
                for syn in &mut self.input.syn {
                    let j = syn.target as usize;
                    let z = if in_window && row.binary_search(&syn.source).is_ok() { 1.0 } else { 0.0 };
                    let g = syn.elig.advance(z, self.psi_prev[j], self.psi[j], self.l[j], self.rate[j], t_arg, &params[j]);
                    if push_in {
                        syn.opt.push(g, scale, &opt);
                    }
                }
                for syn in &mut self.recurrent.syn {
                    let j = syn.target as usize;
                    let z = if z_prev[syn.source as usize] { 1.0 } else { 0.0 };
                    let g = syn.elig.advance(z, self.psi_prev[j], self.psi[j], self.l[j], self.rate[j], t_arg, &params[j]);
                    if push_rec {
                        syn.opt.push(g, scale, &opt);
                    }
                }
                for syn in &mut self.output.syn {
                    let z = if z_now[syn.source as usize] { 1.0 } else { 0.0 };
                    let g = syn.elig.output_step(z, self.err[syn.target as usize], kappa);
                    if push_out {
                        syn.opt.push(g, scale, &opt);
                    }
                }
                if push && per_spike {
                    self.apply_all(1.0);
                }
            }

            self.psi_prev.copy_from_slice(&self.psi);
            z_prev.copy_from_slice(&z_now);
            std::mem::swap(&mut prev_spikes, &mut spikes);
        }
        if push && rec.iteration_end && !per_spike {
            self.apply_all(rec.scale);
        }
        result.prediction = pred.finish();
        result.trace = trace;
        Ok(result)
    }

    /// Apply the pending change of every plastic synapse.
    pub(crate) fn apply_all(&mut self, scale: f64) {
        let opt = self.cfg.optimizer;
        for p in [&mut self.input, &mut self.recurrent, &mut self.output] {
            if !p.plastic {
                continue;
            }
            for s in &mut p.syn {
                s.weight = s.opt.apply(s.weight, scale, &opt);
            }
        }
    }
}
