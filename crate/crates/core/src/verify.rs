//! Self-checks that compare the production code against independent
//! reference computations. Each check is deterministic given its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::algorithms::{
    apply_learning_signal_delay, event_driven_gradient, event_driven_weight_update, optimized_event_gradient,
    time_driven_gradient, time_driven_weight_update, ReplayHistory, ReplayParams,
};
use crate::config::{NetworkConfig, SimMode, WeightInit};
use crate::engine::{Network, ProjectionKind, RecordLevel, StepTrace};
use crate::error::Result;
use crate::history::{ArchiveMode, RecurrentArchive};
use crate::optim::{OptimizerConfig, ParamOptimizer};
use crate::plasticity::{RegKernel, TraceParams};
use crate::sample::{SampleSpec, TargetSignal};
use crate::signals::LossKind;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        CheckResult { name, passed, detail }
    }

    fn from_result(name: &'static str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => CheckResult::new(name, passed, detail),
            Err(e) => CheckResult::new(name, false, format!("error: {e}")),
        }
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

/// Every check with its default size.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![
        algorithm_equivalence(seed, 50),
        online_offline_oracle(seed, 100),
        readout_finite_differences(seed, 20),
        delay_alignment(seed),
        history_memory_bounds(seed, 100_000),
        adam_unit_step(),
    ]
}

fn random_history(rng: &mut ChaCha8Rng, t_len: usize) -> ReplayHistory {
    let rate = rng.random_range(0.0..0.6);
    ReplayHistory {
        psi: (0..t_len).map(|_| rng.random_range(0.0..0.3)).collect(),
        l: (0..t_len).map(|_| rng.random_range(-1.0..1.0)).collect(),
        f: (0..t_len).map(|_| rng.random_range(0.0..0.05)).collect(),
        z: (0..t_len).map(|_| rng.random_bool(rate)).collect(),
    }
}

fn random_trace_params(rng: &mut ChaCha8Rng) -> TraceParams {
    let reg = match rng.random_range(0..3) {
        0 => RegKernel::Off,
        1 => RegKernel::Ema {
            coeff: rng.random_range(0.0..2.0),
            f_star: 0.01,
            beta: rng.random_range(0.5..0.999),
        },
        _ => RegKernel::Cumulative {
            coeff: rng.random_range(0.0..2.0),
            f_star: 0.01,
        },
    };
    TraceParams {
        alpha: rng.random_range(0.5..0.99),
        rho: rng.random_range(0.9..0.999),
        beta_a: if rng.random_bool(0.5) { rng.random_range(0.0..2.0) } else { 0.0 },
        filter: rng.random_range(0.0..0.99),
        reg,
    }
}

/// The five update schedules on random single-synapse histories: 1, 3 and 5
/// bit for bit, 2 and 4 (per-spike GD) to 1e-12.
pub fn algorithm_equivalence(seed: u64, instances: usize) -> CheckResult {
    let run = || -> Result<(bool, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bit_failures = 0;
        let mut worst_weight = 0.0f64;
        for _ in 0..instances {
            let t_len = rng.random_range(1..=200);
            let h = random_history(&mut rng, t_len);
            let p = ReplayParams {
                trace: random_trace_params(&mut rng),
                d: rng.random_range(0..4),
                cutoff: t_len + rng.random_range(0..10),
            };
            let a1 = time_driven_gradient(&h, t_len, &p)?;
            let a3 = event_driven_gradient(&h, t_len, &p)?;
            let (a5, _) = optimized_event_gradient(&h, t_len, &p)?;
            if a1.to_bits() != a3.to_bits() || a1.to_bits() != a5.to_bits() {
                bit_failures += 1;
            }
            let opt = OptimizerConfig::gd(rng.random_range(1e-3..0.1));
            let w0 = rng.random_range(-1.0..1.0);
            let w2 = time_driven_weight_update(&h, t_len, &p, w0, &opt)?;
            let w4 = event_driven_weight_update(&h, t_len, &p, w0, &opt)?;
            worst_weight = worst_weight.max((w2 - w4).abs());
        }
        Ok((
            bit_failures == 0 && worst_weight < 1e-12,
            format!("{instances} instances, {bit_failures} bitwise mismatches, max |w2 - w4| = {worst_weight:.3e}"),
        ))
    };
    CheckResult::from_result("algorithm equivalence", run())
}

/// Reference gradients from a recorded trace, computed two ways: the
/// learning signal times the filtered eligibility trace, and the
/// eligibility trace times the filtered future learning signal.
struct OracleGradients {
    forward: Vec<f64>,
    backward: Vec<f64>,
}

/// Plain eligibility vectors for one synapse onto recurrent neuron `j`.
fn eligibility_series(z_pre: &[f64], psi: &[f64], alpha: f64, rho: f64, beta: f64) -> Vec<f64> {
    let (mut ev, mut ea) = (0.0f64, 0.0f64);
    let mut out = Vec::with_capacity(z_pre.len());
    for t in 0..z_pre.len() {
        let psi_prev = if t == 0 { 0.0 } else { psi[t - 1] };
        let ev_new = alpha * ev + z_pre[t];
        ea = psi_prev * ev + (rho - psi_prev * beta) * ea;
        ev = ev_new;
        out.push(psi[t] * (ev - beta * ea));
    }
    out
}

/// `sum_t l_t sum_{s<=t} k^(t-s) e_s` and `sum_s e_s sum_{t>=s} k^(t-s) l_t`.
fn both_orders(e: &[f64], l: &[f64], k: f64) -> (f64, f64) {
    let n = e.len();
    let mut filt = 0.0;
    let mut fwd = 0.0;
    for t in 0..n {
        filt = k * filt + e[t];
        fwd += l[t] * filt;
    }
    let mut future = 0.0;
    let mut bwd = 0.0;
    for s in (0..n).rev() {
        future = k * future + l[s];
        bwd += e[s] * future;
    }
    (fwd, bwd)
}

fn oracle_gradients(net: &Network, cfg: &NetworkConfig, tr: &StepTrace) -> OracleGradients {
    let t_len = tr.psi.len();
    let filter = cfg.filter_constant();
    let kappa = cfg.kappa();
    let mut g = OracleGradients {
        forward: Vec::new(),
        backward: Vec::new(),
    };
    for kind in [ProjectionKind::Input, ProjectionKind::Recurrent, ProjectionKind::Output] {
        for syn in &net.projection(kind).syn {
            let (i, j) = (syn.source as usize, syn.target as usize);
            let (e, l, k): (Vec<f64>, Vec<f64>, f64) = match kind {
                ProjectionKind::Output => (
                    (0..t_len).map(|t| tr.z[t][i] as u8 as f64).collect(),
                    (0..t_len).map(|t| tr.err[t][j]).collect(),
                    kappa,
                ),
                _ => {
                    let z_pre: Vec<f64> = (0..t_len)
                        .map(|t| match kind {
                            ProjectionKind::Input => tr.x[t][i] as u8 as f64,
                            _ if t == 0 => 0.0,
                            _ => tr.z[t - 1][i] as u8 as f64,
                        })
                        .collect();
                    let psi: Vec<f64> = (0..t_len).map(|t| tr.psi[t][j]).collect();
                    let p = cfg.params_of(j);
                    (
                        eligibility_series(&z_pre, &psi, p.alpha, p.rho, p.beta_a),
                        (0..t_len).map(|t| tr.l[t][j]).collect(),
                        filter,
                    )
                }
            };
            let (f, b) = both_orders(&e, &l, k);
            g.forward.push(f);
            g.backward.push(b);
        }
    }
    g
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn random_regression_sample(rng: &mut ChaCha8Rng, n_in: usize, n_out: usize, t_len: usize) -> SampleSpec {
    let rate = rng.random_range(0.05..0.3);
    let input_spikes = (0..n_in)
        .map(|_| (0..t_len as u32).filter(|_| rng.random_bool(rate)).collect())
        .collect();
    let phase: Vec<f64> = (0..n_out).map(|_| rng.random_range(0.0..6.3)).collect();
    SampleSpec {
        duration: t_len,
        input_spikes,
        target: TargetSignal {
            values: (0..t_len)
                .map(|t| phase.iter().map(|p| (t as f64 * 0.15 + p).sin()).collect())
                .collect(),
            window: (0..t_len).map(|_| rng.random_bool(0.8)).collect(),
        },
        label: None,
    }
}

fn random_oracle_net(rng: &mut ChaCha8Rng) -> Result<(NetworkConfig, SampleSpec)> {
    let n_in = rng.random_range(1..=5);
    let j = rng.random_range(1..=8);
    let k = rng.random_range(1..=3);
    let t_len = rng.random_range(5..=50);
    let mut cfg = NetworkConfig::small(n_in, j, k, rng.random())?;
    cfg.n_alif = rng.random_range(0..=j);
    cfg.n_lif = j - cfg.n_alif;
    cfg.mode = SimMode::TimeDriven;
    cfg.input.init = WeightInit::Normal { mean: 0.4, std: 0.5 };
    cfg.loss = if rng.random_bool(0.5) { LossKind::Mse } else { LossKind::CrossEntropySoftmax };
    let mut sample = random_regression_sample(rng, n_in, k, t_len);
    if cfg.loss == LossKind::CrossEntropySoftmax {
        let label = rng.random_range(0..k);
        sample.target = TargetSignal::one_hot(label, k, sample.target.window.clone())?;
        sample.label = Some(label);
    }
    Ok((cfg, sample))
}

/// Gradients accumulated online by the time-driven engine against the
/// two summation orders evaluated offline on the recorded trace.
pub fn online_offline_oracle(seed: u64, trials: usize) -> CheckResult {
    let run = || -> Result<(bool, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0ac1e);
        let mut worst = 0.0f64;
        let mut worst_orders = 0.0f64;
        let mut spikes = 0u64;
        for _ in 0..trials {
            let (cfg, sample) = random_oracle_net(&mut rng)?;
            let mut net = Network::build(&cfg)?;
            net.set_record(RecordLevel::Full);
            net.set_frozen(true);
            let r = net.run_sample(&sample, false)?;
            spikes += r.spikes_recurrent;
            let tr = r.trace.as_ref().expect("full recording was requested");
            let online: Vec<f64> = [ProjectionKind::Input, ProjectionKind::Recurrent, ProjectionKind::Output]
                .iter()
                .flat_map(|&k| net.gradient_sums(k))
                .collect();
            let o = oracle_gradients(&net, &cfg, tr);
            worst = worst.max(rel_diff(&online, &o.forward)).max(rel_diff(&online, &o.backward));
            worst_orders = worst_orders.max(rel_diff(&o.forward, &o.backward));
        }
        Ok((
            worst < 1e-10 && spikes > 0,
            format!(
                "{trials} trials, {spikes} recurrent spikes, max rel diff online vs offline {worst:.3e} (orders {worst_orders:.3e})"
            ),
        ))
    };
    CheckResult::from_result("online/offline oracle", run())
}

/// Readout-weight gradients against central differences of the MSE loss.
pub fn readout_finite_differences(seed: u64, entries: usize) -> CheckResult {
    let run = || -> Result<(bool, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
        let mut cfg = NetworkConfig::small(10, 20, 3, seed)?;
        cfg.mode = SimMode::TimeDriven;
        cfg.input.init = WeightInit::Normal { mean: 0.3, std: 0.4 };
        let mut sample = random_regression_sample(&mut rng, 10, 3, 60);
        sample.target.window.iter_mut().for_each(|w| *w = true);
        let mut net = Network::build(&cfg)?;
        net.set_frozen(true);
        let r0 = net.run_sample(&sample, false)?;
        let grads = net.gradient_sums(ProjectionKind::Output);
        let h = 1e-5;
        let n_syn = grads.len();
        let mut worst = 0.0f64;
        for _ in 0..entries {
            let idx = rng.random_range(0..n_syn);
            let w = net.projection(ProjectionKind::Output).syn[idx].weight;
            let mut loss_at = |x: f64| -> Result<f64> {
                net.projection_mut(ProjectionKind::Output).syn[idx].weight = x;
                let l = net.run_sample(&sample, false)?.loss;
                net.projection_mut(ProjectionKind::Output).syn[idx].weight = w;
                Ok(l)
            };
            let fd = (loss_at(w + h)? - loss_at(w - h)?) / (2.0 * h);
            let g = grads[idx];
            let err = (fd - g).abs() / g.abs().max(fd.abs()).max(1e-12);
            worst = worst.max(err);
        }
        Ok((
            worst < 1e-5 && r0.spikes_recurrent > 0,
            format!("{entries} readout weights, {} spikes, max rel error {worst:.3e}", r0.spikes_recurrent),
        ))
    };
    CheckResult::from_result("readout finite differences", run())
}

/// Impulse pairing for every small delay pair, zero delays against the
/// undelayed rule bit for bit, and the delayed event-driven engine against
/// the zero-latency reference.
pub fn delay_alignment(seed: u64) -> CheckResult {
    let run = || -> Result<(bool, String)> {
        let mut misplaced = Vec::new();
        for d in 0..3 {
            for d_ls in 0..3 {
                let n = 24;
                let (t_e, t_l) = (6usize, 6 + d);
                let mut e = vec![0.0; n];
                let mut l = vec![0.0; n];
                e[t_e] = 1.0;
                l[t_l] = 1.0;
                let g = apply_learning_signal_delay(&l, &e, d, d_ls, 0.0);
                let hits: Vec<usize> = (0..n).filter(|&t| g[t] != 0.0).collect();
                if hits != [t_e + d + d_ls] {
                    misplaced.push(format!("impulse d={d} d_ls={d_ls} -> {hits:?}"));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xde1a);
        let l: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = apply_learning_signal_delay(&l, &e, 0, 0, 0.8);
        let mut filt = 0.0;
        let base_ok = (0..64).all(|t| {
            filt = 0.8 * filt + e[t];
            g[t].to_bits() == (l[t] * filt).to_bits()
        });
        if !base_ok {
            misplaced.push("zero delays differ from the base rule".into());
        }

        // the delayed engine pairs every trace with its own learning signal
        for d in 0..3u32 {
            for d_ls in 0..3u32 {
                let mut cfg = NetworkConfig::small(4, 6, 2, seed)?;
                cfg.input.init = WeightInit::Normal { mean: 0.3, std: 0.4 };
                cfg.delays.d = d;
                cfg.delays.d_ls = d_ls;
                let mut sums = Vec::new();
                for mode in [SimMode::TimeDriven, SimMode::EventDriven] {
                    cfg.mode = mode;
                    let mut net = Network::build(&cfg)?;
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    for _ in 0..3 {
                        let s = random_regression_sample(&mut rng, 4, 2, 30);
                        net.run_sample(&s, true)?;
                    }
                    sums.push(net.weights()?.checksum());
                }
                if sums[0] != sums[1] {
                    misplaced.push(format!("engine d={d} d_ls={d_ls} differs from the reference"));
                }
            }
        }
        let ok = misplaced.is_empty();
        let detail = if ok {
            "9 impulse offsets exact, zero delays bitwise equal to the base rule, 9 delayed engines bitwise equal to the reference".into()
        } else {
            misplaced.join("; ")
        };
        Ok((ok, detail))
    };
    CheckResult::from_result("delay alignment", run())
}

/// Randomized spike and update schedules against the archive's length
/// bound, in both cleaning modes.
pub fn history_memory_bounds(seed: u64, steps: i64) -> CheckResult {
    let run = || -> Result<(bool, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4157);
        let mut violations = 0usize;
        let mut max_len = 0usize;
        let in_degree = 12usize;

        // per-spike updates
        let (cutoff, lag) = (rng.random_range(3..40i64), rng.random_range(0..4i64));
        let mut a = RecurrentArchive::new(ArchiveMode::PerSpike { cutoff, lag });
        let mut regs = vec![0i64; in_degree];
        let rates: Vec<f64> = (0..in_degree).map(|_| 10f64.powf(rng.random_range(-3.5..-0.5))).collect();
        for _ in 0..in_degree {
            a.updates.add(0);
        }
        for s in 1..=steps {
            a.append_entry(s)?;
            a.write_psi(s, 0.1, 0.0)?;
            let mut dirty = false;
            for (reg, &rate) in regs.iter_mut().zip(&rates) {
                if !rng.random_bool(rate) {
                    continue;
                }
                let end = (s - 1 - lag).max(*reg);
                let stop = end.min(*reg + cutoff);
                a.get_range(*reg, stop)?;
                a.register_update(*reg, end)?;
                *reg = end;
                dirty = true;
            }
            if dirty || s % cutoff == 0 {
                a.erase_used_history(s);
                max_len = max_len.max(a.len());
                if a.len() > a.length_bound(s) || a.updates.len() > in_degree {
                    violations += 1;
                }
            }
        }

        // per-iteration updates over fixed-length samples
        let period = rng.random_range(5..60i64);
        let mut a = RecurrentArchive::new(ArchiveMode::FixedInterval {
            update_interval: period,
            shift: 0,
        });
        let mut regs = vec![0i64; in_degree];
        for _ in 0..in_degree {
            a.updates.add(0);
        }
        for s in 1..=steps {
            a.append_entry(s)?;
            let start = (s - 1).div_euclid(period) * period;
            for (reg, &rate) in regs.iter_mut().zip(&rates) {
                if *reg < start && rng.random_bool(rate) {
                    // the pending sample is complete; later silent samples are skipped
                    a.get_range(*reg, *reg + period)?;
                    a.register_update(*reg, start)?;
                    *reg = start;
                }
            }
            a.erase_used_history(s);
            max_len = max_len.max(a.len());
            if a.len() > a.length_bound(s) || a.updates.len() > in_degree {
                violations += 1;
            }
        }
        Ok((
            violations == 0,
            format!("{steps} steps per mode, {violations} bound violations, longest archive {max_len}, no gaps hit"),
        ))
    };
    CheckResult::from_result("history memory bounds", run())
}

/// One Adam step with a unit gradient moves the weight by the learning rate.
pub fn adam_unit_step() -> CheckResult {
    let cfg = OptimizerConfig::adam(1e-3);
    let mut o = ParamOptimizer::default();
    o.push(1.0, 1.0, &cfg);
    let w = o.apply(0.0, 1.0, &cfg);
    let ratio = w / -cfg.eta;
    CheckResult::new(
        "adam unit step",
        ratio > 0.9999 && ratio < 1.0001,
        format!("dw / -eta = {ratio:.8}"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summation_orders_agree_on_hand_example() {
        // e = [1, 0, 2], l = [0, 1, 1], k = 0.5
        // forward: l1*(0.5*1) + l2*(0.25*1 + 2) = 0.5 + 2.25
        let (f, b) = both_orders(&[1.0, 0.0, 2.0], &[0.0, 1.0, 1.0], 0.5);
        assert_eq!(f, 2.75);
        assert_eq!(b, 2.75);
    }

    #[test]
    fn eligibility_series_of_lif_is_filtered_input_times_psi() {
        let e = eligibility_series(&[1.0, 0.0, 1.0], &[0.5, 0.5, 0.5], 0.5, 0.9, 0.0);
        assert_eq!(e, vec![0.5, 0.25, 0.625]);
    }

    #[test]
    fn quick_checks_pass() {
        for c in [
            algorithm_equivalence(3, 10),
            online_offline_oracle(3, 10),
            readout_finite_differences(3, 5),
            history_memory_bounds(3, 5_000),
            adam_unit_step(),
        ] {
            assert!(c.passed, "{c}");
        }
    }
}
