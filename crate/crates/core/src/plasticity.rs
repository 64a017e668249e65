//! Eligibility traces, low-pass filters, per-step gradient contributions and
//! firing-rate regularization.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::neuron::LifParams;

/// `value <- gamma * value + u`, starting from zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FilterState {
    pub value: f64,
    pub gamma: f64,
}

impl FilterState {
    pub fn new(gamma: f64) -> Self {
        FilterState { value: 0.0, gamma }
    }
}

#[inline]
pub fn filter_step(f: FilterState, u: f64) -> FilterState {
    FilterState {
        value: f.gamma * f.value + u,
        gamma: f.gamma,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum RegMode {
    /// Rate over the whole sample, known only once the sample has ended.
    Static,
    /// Running mean of spikes since the sample start.
    Cumulative,
    /// Exponential moving average with constant `beta`.
    Ema { beta: f64 },
}

/// Firing-rate regularization settings. `f_star` is in spikes per 1000 steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationParams {
    pub c_reg: f64,
    pub f_star: f64,
    pub mode: RegMode,
}

impl RegularizationParams {
    pub fn off() -> Self {
        RegularizationParams {
            c_reg: 0.0,
            f_star: 10.0,
            mode: RegMode::Cumulative,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_reg >= 0.0 && self.c_reg.is_finite()) {
            return Err(invalid("c_reg", "must be non-negative"));
        }
        if !(self.f_star >= 0.0 && self.f_star.is_finite()) {
            return Err(invalid("f_star", "must be non-negative"));
        }
        if let RegMode::Ema { beta } = self.mode {
            if !(0.0..1.0).contains(&beta) {
                return Err(invalid("reg beta", "must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.c_reg > 0.0
    }

    /// Per-step kernel for samples of `duration` steps.
    pub fn kernel(&self, duration: usize) -> Result<RegKernel> {
        if !self.is_active() {
            return Ok(RegKernel::Off);
        }
        let f_star = self.f_star / 1000.0;
        Ok(match self.mode {
            RegMode::Static => {
                if duration == 0 {
                    return Err(invalid("duration", "static regularization needs T > 0"));
                }
                RegKernel::Static {
                    coeff: self.c_reg / duration as f64,
                    f_star,
                }
            }
            RegMode::Cumulative => RegKernel::Cumulative {
                coeff: self.c_reg,
                f_star,
            },
            RegMode::Ema { beta } => RegKernel::Ema {
                coeff: self.c_reg,
                f_star,
                beta,
            },
        })
    }
}

/// Effective regularization term applied at every step; rates in spikes/step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegKernel {
    Off,
    Static { coeff: f64, f_star: f64 },
    Cumulative { coeff: f64, f_star: f64 },
    Ema { coeff: f64, f_star: f64, beta: f64 },
}

impl RegKernel {
    /// Postsynaptic rate update for step `t` (1-based within the sample).
    #[inline]
    pub fn rate_step(&self, f_prev: f64, z: f64, t: usize) -> f64 {
        match *self {
            RegKernel::Cumulative { .. } => cumulative_rate_step(f_prev, z, t),
            RegKernel::Ema { beta, .. } => ema_rate_step(f_prev, z, beta),
            RegKernel::Off | RegKernel::Static { .. } => 0.0,
        }
    }
}

/// `f <- beta f + (1 - beta) z`.
#[inline]
pub fn ema_rate_step(f_prev: f64, z: f64, beta: f64) -> f64 {
    beta * f_prev + (1.0 - beta) * z
}

/// Exact running mean for 1-based step `t`.
#[inline]
pub fn cumulative_rate_step(f_prev: f64, z: f64, t: usize) -> f64 {
    f_prev + (z - f_prev) / t as f64
}

/// Constants shared by every synapse onto one postsynaptic neuron.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceParams {
    pub alpha: f64,
    pub rho: f64,
    pub beta_a: f64,
    /// Filter constant applied to the eligibility trace (kappa, or a decoupled value).
    pub filter: f64,
    pub reg: RegKernel,
}

impl TraceParams {
    pub fn new(p: &LifParams, filter: f64, reg: RegKernel) -> Self {
        TraceParams {
            alpha: p.alpha,
            rho: p.rho,
            beta_a: p.beta_a,
            filter,
            reg,
        }
    }
}

/// Per-synapse plasticity state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EligibilityState {
    pub eps_v: f64,
    pub eps_a: f64,
    pub filt_trace: f64,
    pub reg_trace: f64,
    pub grad_accum: f64,
}

impl EligibilityState {
    /// Clear the traces; the gradient accumulator is left alone.
    pub fn reset_traces(&mut self) {
        self.eps_v = 0.0;
        self.eps_a = 0.0;
        self.filt_trace = 0.0;
        self.reg_trace = 0.0;
    }

    /// Eligibility-vector update for one step; `z_pre` is the presynaptic
    /// value arriving at this step.
    #[inline]
    pub fn eligibility_step(&mut self, z_pre: f64, psi_prev: f64, p: &TraceParams) {
        let eps_v_old = self.eps_v;
        self.eps_v = p.alpha * eps_v_old + z_pre;
        self.eps_a = psi_prev * eps_v_old + (p.rho - psi_prev * p.beta_a) * self.eps_a;
    }

    #[inline]
    pub fn eligibility_trace(&self, psi: f64, p: &TraceParams) -> f64 {
        psi * (self.eps_v - p.beta_a * self.eps_a)
    }

    /// Filter the (possibly delayed) trace `e`, form the gradient contribution
    /// with learning signal `l` and rate `f`, and accumulate it.
    #[inline]
    pub fn grad_step(&mut self, e: f64, l: f64, f: f64, t: usize, p: &TraceParams) -> f64 {
        self.filt_trace = p.filter * self.filt_trace + e;
        let reg = match p.reg {
            RegKernel::Off => 0.0,
            RegKernel::Static { coeff, f_star } => {
                self.reg_trace = e;
                coeff * (f - f_star) * self.reg_trace
            }
            RegKernel::Cumulative { coeff, f_star } => {
                self.reg_trace += (e - self.reg_trace) / t as f64;
                coeff * (f - f_star) * self.reg_trace
            }
            RegKernel::Ema { coeff, f_star, beta } => {
                self.reg_trace = beta * self.reg_trace + (1.0 - beta) * e;
                coeff * (f - f_star) * self.reg_trace
            }
        };
        let g = l * self.filt_trace + reg;
        self.grad_accum += g;
        g
    }

    /// One full step for a synapse onto a recurrent neuron.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub fn advance(
        &mut self,
        z_pre: f64,
        psi_prev: f64,
        psi: f64,
        l: f64,
        f: f64,
        t: usize,
        p: &TraceParams,
    ) -> f64 {
        self.eligibility_step(z_pre, psi_prev, p);
        let e = self.eligibility_trace(psi, p);
        self.grad_step(e, l, f, t, p)
    }

    /// One step for a synapse onto a readout: `g = E * F_kappa[z]`, with the
    /// filtered presynaptic spikes kept in `filt_trace`.
    #[inline]
    pub fn output_step(&mut self, z_pre: f64, err: f64, kappa: f64) -> f64 {
        self.filt_trace = kappa * self.filt_trace + z_pre;
        let g = grad_step_output(err, self.filt_trace);
        self.grad_accum += g;
        g
    }

    /// Decay all traces across `n` steps without presynaptic input or surrogate
    /// gradient (used when history beyond the cutoff is skipped).
    pub fn decay_silent(&mut self, n: u64, p: &TraceParams) {
        if n == 0 {
            return;
        }
        let n = n.min(i32::MAX as u64) as i32;
        self.eps_v *= p.alpha.powi(n);
        self.eps_a *= p.rho.powi(n);
        self.filt_trace *= p.filter.powi(n);
        if let RegKernel::Ema { beta, .. } = p.reg {
            self.reg_trace *= beta.powi(n);
        }
    }
}

/// Per-step gradient contribution for an output synapse.
#[inline]
pub fn grad_step_output(err: f64, z_filtered: f64) -> f64 {
    err * z_filtered
}

/// Regularization contribution alone: `coeff (f - f*) trace`.
pub fn firing_rate_regularization(kernel: &RegKernel, f: f64, trace: f64) -> f64 {
    match *kernel {
        RegKernel::Off => 0.0,
        RegKernel::Static { coeff, f_star }
        | RegKernel::Cumulative { coeff, f_star }
        | RegKernel::Ema { coeff, f_star, .. } => coeff * (f - f_star) * trace,
    }
}
