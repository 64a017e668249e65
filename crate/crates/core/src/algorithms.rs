//! Single-synapse replays of the five weight-update schedules on recorded
//! postsynaptic histories, with an explicit recurrent-to-readout delay `d`:
//! the learning signal at step `t` is paired with the eligibility trace of
//! step `t - d`.
//!
//! 1. time-driven gradient accumulation (eligibility FIFO)
//! 2. time-driven per-step weight updates
//! 3. event-driven accumulation over left-open inter-spike intervals (eligibility FIFO)
//! 4. event-driven with a presynaptic spike FIFO and per-spike updates
//! 5. event-driven with sparse spike times
//!
//! All schedules issue the same floating-point operations in the same order
//! per synapse, so 1, 3 and 5 agree bit for bit when the cutoff covers the
//! whole sequence.

use std::collections::VecDeque;

use crate::error::{EpropError, Result};
use crate::optim::{OptimizerConfig, ParamOptimizer};
use crate::plasticity::{EligibilityState, TraceParams};

/// Postsynaptic signals and presynaptic arrivals for steps `1..=T`
/// (stored at index `t - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayHistory {
    pub psi: Vec<f64>,
    pub l: Vec<f64>,
    pub f: Vec<f64>,
    pub z: Vec<bool>,
}

impl ReplayHistory {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    fn check(&self, t_len: usize) -> Result<()> {
        let available = self.psi.len().min(self.l.len()).min(self.f.len()).min(self.z.len());
        if available < t_len {
            return Err(EpropError::HistoryTooShort {
                needed: t_len,
                available,
            });
        }
        Ok(())
    }

    fn psi_at(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.psi[t - 1]
        }
    }

    /// Arrival steps (1-based).
    pub fn spike_times(&self) -> Vec<usize> {
        self.z
            .iter()
            .enumerate()
            .filter_map(|(i, &z)| z.then_some(i + 1))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayParams {
    pub trace: TraceParams,
    pub d: usize,
    /// Steps after the previous spike beyond which history is skipped.
    pub cutoff: usize,
}

/// Eligibility computation plus delayed pairing, shared by every schedule.
#[derive(Debug, Clone, Default)]
struct Pairing {
    elig: EligibilityState,
}

impl Pairing {
    /// Eligibility trace of step `tau`.
    #[inline]
    fn eligibility(&mut self, h: &ReplayHistory, tau: usize, z: f64, p: &ReplayParams) -> f64 {
        self.elig.eligibility_step(z, h.psi_at(tau - 1), &p.trace);
        self.elig.eligibility_trace(h.psi_at(tau), &p.trace)
    }

    /// Gradient at step `t` from the trace `e` of step `t - d`.
    #[inline]
    fn pair(&mut self, h: &ReplayHistory, t: usize, e: f64, p: &ReplayParams) -> f64 {
        if t <= p.d {
            return 0.0;
        }
        let tau = t - p.d;
        self.elig.grad_step(e, h.l[t - 1], h.f[tau - 1], tau, &p.trace)
    }
}

/// Algorithm 1: accumulate every step, single update at the end.
pub fn time_driven_gradient(h: &ReplayHistory, t_len: usize, p: &ReplayParams) -> Result<f64> {
    h.check(t_len)?;
    let mut s = Pairing::default();
    let mut fifo: VecDeque<f64> = std::iter::repeat(0.0).take(p.d).collect();
    for t in 1..=t_len {
        let e = s.eligibility(h, t, h.z[t - 1] as u8 as f64, p);
        fifo.push_back(e);
        let e_delayed = fifo.pop_front().unwrap_or(0.0);
        s.pair(h, t, e_delayed, p);
    }
    Ok(s.elig.grad_accum)
}

/// Algorithm 2: the weight changes at every step.
pub fn time_driven_weight_update(
    h: &ReplayHistory,
    t_len: usize,
    p: &ReplayParams,
    w0: f64,
    opt: &OptimizerConfig,
) -> Result<f64> {
    h.check(t_len)?;
    let mut s = Pairing::default();
    let mut o = ParamOptimizer::default();
    let mut w = w0;
    let mut fifo: VecDeque<f64> = std::iter::repeat(0.0).take(p.d).collect();
    for t in 1..=t_len {
        let e = s.eligibility(h, t, h.z[t - 1] as u8 as f64, p);
        fifo.push_back(e);
        let e_delayed = fifo.pop_front().unwrap_or(0.0);
        let g = s.pair(h, t, e_delayed, p);
        o.push(g, 1.0, opt);
        w = o.apply(w, 1.0, opt);
    }
    Ok(w)
}

/// Interval ends at which an event-driven synapse does work: every spike,
/// then the end of the sequence.
fn event_points(h: &ReplayHistory, t_len: usize) -> Vec<usize> {
    let mut pts: Vec<usize> = h.spike_times().into_iter().filter(|&t| t <= t_len).collect();
    if pts.last() != Some(&t_len) {
        pts.push(t_len);
    }
    pts
}

/// Algorithm 3: at each spike, walk `(t_prev, t_spike]` with an eligibility FIFO.
pub fn event_driven_gradient(h: &ReplayHistory, t_len: usize, p: &ReplayParams) -> Result<f64> {
    h.check(t_len)?;
    let mut s = Pairing::default();
    let mut fifo: VecDeque<f64> = std::iter::repeat(0.0).take(p.d).collect();
    let mut t_prev = 0usize;
    for t_spike in event_points(h, t_len) {
        for t in interval_steps(t_prev, t_spike, p.cutoff, |n| skip(&mut s, &mut fifo, n, p)) {
            let e = s.eligibility(h, t, h.z[t - 1] as u8 as f64, p);
            fifo.push_back(e);
            let e_delayed = fifo.pop_front().unwrap_or(0.0);
            s.pair(h, t, e_delayed, p);
        }
        t_prev = t_spike;
    }
    Ok(s.elig.grad_accum)
}

/// Steps processed for the interval `(t_prev, t_spike]`: at most `cutoff`
/// steps after `t_prev`, then the spike step itself. `on_skip` receives the
/// number of skipped steps before the spike step is visited.
fn interval_steps(
    t_prev: usize,
    t_spike: usize,
    cutoff: usize,
    mut on_skip: impl FnMut(usize),
) -> Vec<usize> {
    let t_stop = t_spike.min(t_prev + cutoff);
    let mut steps: Vec<usize> = (t_prev + 1..=t_stop).collect();
    if t_stop < t_spike {
        on_skip(t_spike - 1 - t_stop);
        steps.push(t_spike);
    }
    steps
}

fn skip(s: &mut Pairing, fifo: &mut VecDeque<f64>, n: usize, p: &ReplayParams) {
    s.elig.decay_silent(n as u64, &p.trace);
    fifo.iter_mut().for_each(|e| *e = 0.0);
}

/// Algorithm 4: presynaptic spike FIFO of length `d + 1`, weight update at
/// every spike.
pub fn event_driven_weight_update(
    h: &ReplayHistory,
    t_len: usize,
    p: &ReplayParams,
    w0: f64,
    opt: &OptimizerConfig,
) -> Result<f64> {
    h.check(t_len)?;
    let mut s = Pairing::default();
    let mut o = ParamOptimizer::default();
    let mut w = w0;
    let mut zq: VecDeque<f64> = std::iter::repeat(0.0).take(p.d).collect();
    let mut t_prev = 0usize;
    for t_spike in event_points(h, t_len) {
        let steps = interval_steps(t_prev, t_spike, p.cutoff, |n| {
            s.elig.decay_silent(n as u64, &p.trace);
            zq.iter_mut().for_each(|z| *z = 0.0);
        });
        for t in steps {
            zq.push_back(h.z[t - 1] as u8 as f64);
            let z_delayed = zq.pop_front().unwrap_or(0.0);
            if t > p.d {
                let e = s.eligibility(h, t - p.d, z_delayed, p);
                let g = s.pair(h, t, e, p);
                o.push(g, 1.0, opt);
            }
        }
        w = o.apply(w, 1.0, opt);
        t_prev = t_spike;
    }
    Ok(w)
}

/// Algorithm 5: only spike timestamps within the delay window are kept.
/// Returns the accumulated gradient and the number of timestamps held at most.
pub fn optimized_event_gradient(
    h: &ReplayHistory,
    t_len: usize,
    p: &ReplayParams,
) -> Result<(f64, usize)> {
    h.check(t_len)?;
    let mut s = Pairing::default();
    let mut times: VecDeque<usize> = VecDeque::new();
    let mut max_held = 0;
    let mut t_prev = 0usize;
    for t_spike in event_points(h, t_len) {
        let steps = interval_steps(t_prev, t_spike, p.cutoff, |n| {
            s.elig.decay_silent(n as u64, &p.trace);
            times.clear();
        });
        for t in steps {
            if h.z[t - 1] {
                times.push_back(t);
            }
            max_held = max_held.max(times.len());
            if t > p.d {
                let tau = t - p.d;
                let z = if times.front() == Some(&tau) {
                    times.pop_front();
                    1.0
                } else {
                    0.0
                };
                let e = s.eligibility(h, tau, z, p);
                s.pair(h, t, e, p);
            }
        }
        t_prev = t_spike;
    }
    Ok((s.elig.grad_accum, max_held))
}

/// Gradient sequence with a learning-signal delay: `L^{t - d_ls}` is paired
/// with the filtered trace of step `t - d - d_ls`.
pub fn apply_learning_signal_delay(
    l: &[f64],
    e: &[f64],
    d: usize,
    d_ls: usize,
    kappa: f64,
) -> Vec<f64> {
    let n = l.len().max(e.len());
    let shift = d + d_ls;
    let mut filt = 0.0;
    (0..n)
        .map(|t| {
            let e_del = if t >= shift { e.get(t - shift).copied().unwrap_or(0.0) } else { 0.0 };
            filt = kappa * filt + e_del;
            let l_del = if t >= d_ls { l.get(t - d_ls).copied().unwrap_or(0.0) } else { 0.0 };
            l_del * filt
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerConfig;
    use crate::plasticity::RegKernel;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(d: usize, cutoff: usize, reg: RegKernel) -> ReplayParams {
        ReplayParams {
            trace: TraceParams {
                alpha: 0.9,
                rho: 0.97,
                beta_a: 0.6,
                filter: 0.8,
                reg,
            },
            d,
            cutoff,
        }
    }

    fn random_history(rng: &mut ChaCha8Rng, t_len: usize, rate: f64) -> ReplayHistory {
        ReplayHistory {
            psi: (0..t_len).map(|_| rng.random_range(0.0..0.3)).collect(),
            l: (0..t_len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            f: (0..t_len).map(|_| rng.random_range(0.0..0.05)).collect(),
            z: (0..t_len).map(|_| rng.random_bool(rate)).collect(),
        }
    }

    #[test]
    fn zero_learning_signal_leaves_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut h = random_history(&mut rng, 30, 0.2);
        h.l.iter_mut().for_each(|l| *l = 0.0);
        let p = params(1, 100, RegKernel::Off);
        assert_eq!(time_driven_gradient(&h, 30, &p).unwrap(), 0.0);
        let opt = OptimizerConfig::gd(0.1);
        assert_eq!(time_driven_weight_update(&h, 30, &p, 0.4, &opt).unwrap(), 0.4);
    }

    #[test]
    fn short_history_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_history(&mut rng, 10, 0.2);
        let p = params(0, 100, RegKernel::Off);
        assert!(matches!(
            time_driven_gradient(&h, 11, &p),
            Err(EpropError::HistoryTooShort { .. })
        ));
    }

    #[test]
    fn no_delay_reduces_to_plain_accumulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_history(&mut rng, 40, 0.3);
        let p = params(0, 100, RegKernel::Off);
        let mut e = EligibilityState::default();
        for t in 1..=40 {
            let pp = if t == 1 { 0.0 } else { h.psi[t - 2] };
            e.advance(h.z[t - 1] as u8 as f64, pp, h.psi[t - 1], h.l[t - 1], 0.0, t, &p.trace);
        }
        assert_eq!(time_driven_gradient(&h, 40, &p).unwrap().to_bits(), e.grad_accum.to_bits());
    }

    #[test]
    fn single_contribution_equivalence() {
        // one nonzero contribution at t = 3: per-step and accumulated GD agree
        let h = ReplayHistory {
            psi: vec![0.0, 0.0, 0.5, 0.0, 0.0],
            l: vec![0.0, 0.0, 2.0, 0.0, 0.0],
            f: vec![0.0; 5],
            z: vec![false, false, true, false, false],
        };
        let mut p = params(0, 100, RegKernel::Off);
        p.trace.filter = 0.0;
        let opt = OptimizerConfig::gd(0.1);
        let g = time_driven_gradient(&h, 5, &p).unwrap();
        let w = time_driven_weight_update(&h, 5, &p, 1.0, &opt).unwrap();
        assert_eq!(w, 1.0 - 0.1 * g);
    }

    #[test]
    fn dense_and_sparse_spiking_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for rate in [1.0, 0.01] {
            let h = random_history(&mut rng, 200, rate);
            let p = params(2, 1000, RegKernel::Off);
            let a = time_driven_gradient(&h, 200, &p).unwrap();
            let (b, held) = optimized_event_gradient(&h, 200, &p).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
            assert!(held <= p.d + 1);
        }
    }

    #[test]
    fn silent_presynapse_gives_decay_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut h = random_history(&mut rng, 50, 0.0);
        h.z.iter_mut().for_each(|z| *z = false);
        let p = params(1, 1000, RegKernel::Off);
        assert_eq!(optimized_event_gradient(&h, 50, &p).unwrap().0, 0.0);
    }

    #[test]
    fn cutoff_irrelevant_when_spikes_are_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut h = random_history(&mut rng, 120, 0.0);
        for t in (0..120).step_by(4) {
            h.z[t] = true;
        }
        let p_full = params(1, 1000, RegKernel::Off);
        let p_cut = params(1, 5, RegKernel::Off);
        let a = event_driven_gradient(&h, 120, &p_full).unwrap();
        let b = event_driven_gradient(&h, 120, &p_cut).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn cutoff_truncates_sparse_spikes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut h = random_history(&mut rng, 200, 0.0);
        h.z[0] = true;
        h.z[150] = true;
        let full = event_driven_gradient(&h, 200, &params(0, 1000, RegKernel::Off)).unwrap();
        let cut = event_driven_gradient(&h, 200, &params(0, 10, RegKernel::Off)).unwrap();
        assert_ne!(full, cut);
    }

    #[test]
    fn learning_signal_delay_impulses() {
        for d in 0..3 {
            for d_ls in 0..3 {
                let n = 20;
                let (t_e, t_l) = (5usize, 5 + d);
                let mut e = vec![0.0; n];
                let mut l = vec![0.0; n];
                e[t_e] = 1.0;
                l[t_l] = 1.0;
                let g = apply_learning_signal_delay(&l, &e, d, d_ls, 0.0);
                let hits: Vec<usize> = (0..n).filter(|&t| g[t] != 0.0).collect();
                assert_eq!(hits, vec![t_e + d + d_ls], "d={d} d_ls={d_ls}");
            }
        }
    }

    #[test]
    fn zero_delays_reduce_to_base_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let l: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = apply_learning_signal_delay(&l, &e, 0, 0, 0.7);
        let mut filt = 0.0;
        for t in 0..30 {
            filt = 0.7 * filt + e[t];
            assert_eq!(g[t].to_bits(), (l[t] * filt).to_bits());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn schedules_agree(seed in 0u64..10_000, t_len in 1usize..200, d in 0usize..4, rate in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_history(&mut rng, t_len, rate);
            let reg = RegKernel::Ema { coeff: 0.5, f_star: 0.01, beta: 0.9 };
            let p = params(d, t_len, reg);
            let a1 = time_driven_gradient(&h, t_len, &p).unwrap();
            let a3 = event_driven_gradient(&h, t_len, &p).unwrap();
            let (a5, _) = optimized_event_gradient(&h, t_len, &p).unwrap();
            prop_assert_eq!(a1.to_bits(), a3.to_bits());
            prop_assert_eq!(a1.to_bits(), a5.to_bits());
            let opt = OptimizerConfig::gd(0.05);
            let w2 = time_driven_weight_update(&h, t_len, &p, 0.3, &opt).unwrap();
            let w4 = event_driven_weight_update(&h, t_len, &p, 0.3, &opt).unwrap();
            prop_assert!((w2 - w4).abs() < 1e-12);
        }
    }
}
