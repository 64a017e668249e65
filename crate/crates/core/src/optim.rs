//! Gradient descent and Adam in the reordered form with constant epsilon-hat.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, EpropError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Gd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "gd" => Ok(OptimizerKind::Gd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Stabilizer of the canonical form; kept for reference, the reordered
    /// update uses `eps_hat`.
    pub eps: f64,
    pub eps_hat: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            eta: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            eps_hat: 1e-7,
        }
    }
}

impl OptimizerConfig {
    pub fn gd(eta: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Gd,
            eta,
            ..Default::default()
        }
    }

    pub fn adam(eta: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            eta,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", "must be non-negative and finite"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("beta1/beta2", "must lie in [0, 1)"));
        }
        if !(self.eps_hat > 0.0) {
            return Err(invalid("eps_hat", "must be positive"));
        }
        Ok(())
    }
}

/// `w - eta * grad_sum`.
#[inline]
pub fn gd_update(weight: f64, grad_sum: f64, eta: f64) -> f64 {
    weight - eta * grad_sum
}

/// Per-parameter Adam moments and step counter.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AdamState {
    pub m: f64,
    pub v: f64,
    pub t: u64,
}

/// `beta^t` as a function of `t` alone, so the result does not depend on
/// how the counter got there.
#[inline]
fn decay_pow(beta: f64, t: u64) -> f64 {
    beta.powi(t.min(i32::MAX as u64) as i32)
}

/// `(sqrt(1 - beta2^t), 1 - beta1^t)`.
#[inline]
fn bias_terms(beta1: f64, beta2: f64, t: u64) -> (f64, f64) {
    ((1.0 - decay_pow(beta2, t)).sqrt(), 1.0 - decay_pow(beta1, t))
}

const BIAS_CACHE_LEN: u64 = 1 << 20;

struct BiasCache {
    betas: (f64, f64),
    terms: Vec<(f64, f64)>,
}

thread_local! {
    static BIAS_CACHE: RefCell<BiasCache> = const {
        RefCell::new(BiasCache { betas: (f64::NAN, f64::NAN), terms: Vec::new() })
    };
}

/// Memoized `bias_terms`; the values are the same as computing them directly.
#[inline]
fn cached_bias_terms(beta1: f64, beta2: f64, t: u64) -> (f64, f64) {
    if t >= BIAS_CACHE_LEN {
        return bias_terms(beta1, beta2, t);
    }
    BIAS_CACHE.with_borrow_mut(|c| {
        if c.betas != (beta1, beta2) {
            c.betas = (beta1, beta2);
            c.terms.clear();
        }
        let i = t as usize;
        if i >= c.terms.len() {
            let to = (i + 1).max(2 * c.terms.len()).min(BIAS_CACHE_LEN as usize);
            for k in c.terms.len()..to {
                c.terms.push(bias_terms(beta1, beta2, k as u64));
            }
        }
        c.terms[i]
    })
}

impl AdamState {
    /// Consume one per-step gradient and return its weight change.
    #[inline]
    pub fn step(&mut self, g: f64, cfg: &OptimizerConfig) -> f64 {
        self.t += 1;
        self.m = cfg.beta1 * self.m + (1.0 - cfg.beta1) * g;
        self.v = cfg.beta2 * self.v + (1.0 - cfg.beta2) * g * g;
        let (c2, c1) = cached_bias_terms(cfg.beta1, cfg.beta2, self.t);
        let eta_t = cfg.eta * c2 / c1;
        -eta_t * self.m / (self.v.sqrt() + cfg.eps_hat)
    }

    /// Advance across `n` zero-gradient steps. Exact (stepwise) while the
    /// moments are non-zero unless `truncate` is set, in which case the
    /// moments decay in closed form and the skipped updates are dropped.
    pub fn zero_steps(&mut self, n: u64, cfg: &OptimizerConfig, truncate: bool) -> f64 {
        if self.m == 0.0 && self.v == 0.0 {
            self.t += n;
            return 0.0;
        }
        if truncate {
            let k = n.min(i32::MAX as u64) as i32;
            self.m *= cfg.beta1.powi(k);
            self.v *= cfg.beta2.powi(k);
            self.t += n;
            return 0.0;
        }
        let mut delta = 0.0;
        for _ in 0..n {
            delta += self.step(0.0, cfg);
        }
        delta
    }
}

/// Run Adam over a gradient sequence and apply the summed change once.
pub fn adam_update(
    state: &mut AdamState,
    weight: f64,
    grads: &[f64],
    cfg: &OptimizerConfig,
) -> f64 {
    let mut delta = 0.0;
    for &g in grads {
        delta += state.step(g, cfg);
    }
    weight + delta
}

/// Arithmetic mean of per-sample gradient sums.
pub fn batch_average(grad_sums: &[f64]) -> Result<f64> {
    if grad_sums.is_empty() {
        return Err(EpropError::Empty("mini-batch"));
    }
    Ok(grad_sums.iter().sum::<f64>() / grad_sums.len() as f64)
}

/// Optimizer bookkeeping embedded in a synapse.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParamOptimizer {
    pub adam: AdamState,
    /// Gradient sum since the last applied update (gradient descent).
    pub grad_sum: f64,
    /// Weight change accumulated since the last applied update (Adam).
    pub delta: f64,
}

impl ParamOptimizer {
    /// Record one per-step gradient; `scale` is 1/N under batch averaging.
    #[inline]
    pub fn push(&mut self, g: f64, scale: f64, cfg: &OptimizerConfig) {
        match cfg.kind {
            OptimizerKind::Gd => self.grad_sum += g,
            OptimizerKind::Adam => self.delta += self.adam.step(g * scale, cfg),
        }
    }

    pub fn push_zeros(&mut self, n: u64, cfg: &OptimizerConfig, truncate: bool) {
        if cfg.kind != OptimizerKind::Adam {
            return;
        }
        if truncate || (self.adam.m == 0.0 && self.adam.v == 0.0) {
            self.delta += self.adam.zero_steps(n, cfg, truncate);
        } else {
            // step by step so the sum matches pushing explicit zeros
            for _ in 0..n {
                self.delta += self.adam.step(0.0, cfg);
            }
        }
    }

    /// Apply and clear the pending change.
    #[inline]
    pub fn apply(&mut self, weight: f64, scale: f64, cfg: &OptimizerConfig) -> f64 {
        let w = match cfg.kind {
            OptimizerKind::Gd => gd_update(weight, self.grad_sum * scale, cfg.eta),
            OptimizerKind::Adam => weight + self.delta,
        };
        self.grad_sum = 0.0;
        self.delta = 0.0;
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gd_examples() {
        assert_eq!(gd_update(0.7, 0.0, 0.1), 0.7);
        assert!((gd_update(1.0, 2.0, 0.1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn cached_bias_terms_match_direct_values() {
        for (b1, b2) in [(0.9, 0.999), (0.5, 0.7), (0.9, 0.999)] {
            for t in [1, 2, 3, 17, 5000, 123_456, BIAS_CACHE_LEN - 1, BIAS_CACHE_LEN + 3] {
                assert_eq!(cached_bias_terms(b1, b2, t), bias_terms(b1, b2, t), "{b1} {b2} {t}");
            }
        }
    }

    #[test]
    fn adam_zero_gradients() {
        let cfg = OptimizerConfig::adam(0.01);
        let mut s = AdamState::default();
        let w = adam_update(&mut s, 0.5, &[0.0; 10], &cfg);
        assert_eq!(w, 0.5);
        assert_eq!((s.m, s.v, s.t), (0.0, 0.0, 10));
    }

    #[test]
    fn adam_single_unit_step() {
        let cfg = OptimizerConfig::adam(0.01);
        let mut s = AdamState::default();
        let w = adam_update(&mut s, 0.0, &[1.0], &cfg);
        assert!((s.m - 0.1).abs() < 1e-15);
        assert!((s.v - 0.001).abs() < 1e-15);
        // hand evaluation: sqrt(0.001)/0.1 * 0.1/(sqrt(0.001)+1e-7)
        let expected = 0.001f64.sqrt() / (0.001f64.sqrt() + 1e-7);
        assert!((w / -0.01 - expected).abs() < 1e-12);
        assert!(w / -0.01 > 0.9999 && w / -0.01 < 1.0001);
    }

    #[test]
    fn adam_constant_gradient_tends_to_eta() {
        let cfg = OptimizerConfig::adam(0.002);
        let mut s = AdamState::default();
        let mut last = 0.0;
        for _ in 0..20_000 {
            last = s.step(0.37, &cfg);
        }
        assert!((last.abs() - 0.002).abs() < 1e-6);
    }

    #[test]
    fn reordered_form_differs_from_canonical_with_constant_eps_hat() {
        let cfg = OptimizerConfig::adam(0.01);
        let mut s = AdamState::default();
        let reordered = s.step(1e-6, &cfg);
        let m_hat = (1.0 - cfg.beta1) * 1e-6 / (1.0 - cfg.beta1);
        let v_hat = (1.0 - cfg.beta2) * 1e-12 / (1.0 - cfg.beta2);
        let canonical = -cfg.eta * m_hat / (v_hat.sqrt() + cfg.eps);
        assert!((reordered - canonical).abs() > 1e-6 * cfg.eta);
        // with eps_hat = eps * sqrt(1 - beta2^t) the two agree
        let varying = OptimizerConfig {
            eps_hat: cfg.eps * (1.0 - cfg.beta2).sqrt(),
            ..cfg
        };
        let mut s = AdamState::default();
        let r2 = s.step(1e-6, &varying);
        assert!((r2 - canonical).abs() < 1e-12 * cfg.eta.max(canonical.abs()));
    }

    #[test]
    fn batch_average_examples() {
        assert_eq!(batch_average(&[4.2]).unwrap(), 4.2);
        assert_eq!(batch_average(&[1.0, 3.0]).unwrap(), 2.0);
        assert!(batch_average(&[]).is_err());
        let sums = [0.3, -1.1, 2.4];
        let avg = batch_average(&sums).unwrap();
        let via_scaled_eta = gd_update(1.0, sums.iter().sum::<f64>(), 0.1 / 3.0);
        assert!((gd_update(1.0, avg, 0.1) - via_scaled_eta).abs() < 1e-15);
    }

    #[test]
    fn zero_steps_exact_matches_stepping() {
        let cfg = OptimizerConfig::adam(0.01);
        let mut a = AdamState::default();
        a.step(0.4, &cfg);
        let mut b = a;
        let da = a.zero_steps(25, &cfg, false);
        let mut db = 0.0;
        for _ in 0..25 {
            db += b.step(0.0, &cfg);
        }
        assert_eq!(da.to_bits(), db.to_bits());
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn gd_is_linear(g in -10.0f64..10.0, c in -3.0f64..3.0) {
            let d1 = gd_update(0.0, g, 0.05);
            let d2 = gd_update(0.0, c * g, 0.05);
            prop_assert!((d2 - c * d1).abs() < 1e-12);
        }

        #[test]
        fn adam_second_moment_non_negative(gs in prop::collection::vec(-5.0f64..5.0, 1..100)) {
            let cfg = OptimizerConfig::adam(0.01);
            let mut s = AdamState::default();
            for g in gs {
                s.step(g, &cfg);
                prop_assert!(s.v >= 0.0);
            }
        }
    }
}
