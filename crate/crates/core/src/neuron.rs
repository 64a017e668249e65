//! Discrete-time neuron models: recurrent LIF/ALIF units, leaky-integrator
//! readouts, surrogate gradients and the ignore-and-fire unit used by the
//! scaling workload.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Result};

/// What happens to the membrane voltage on the step after a spike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum ResetMode {
    /// Subtract the current effective threshold.
    SubtractThreshold,
    /// Replace the previous voltage with a fixed value before decay.
    ResetToValue { v_reset: f64 },
}

impl Default for ResetMode {
    fn default() -> Self {
        ResetMode::SubtractThreshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateKind {
    PiecewiseLinear,
    Exponential,
    FastSigmoid,
    Arctan,
}

impl std::str::FromStr for SurrogateKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "piecewise-linear" => Ok(SurrogateKind::PiecewiseLinear),
            "exponential" => Ok(SurrogateKind::Exponential),
            "fast-sigmoid" => Ok(SurrogateKind::FastSigmoid),
            "arctan" => Ok(SurrogateKind::Arctan),
            other => Err(format!("unknown surrogate kind `{other}`")),
        }
    }
}

/// Shape of the pseudo-derivative of the spike function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub kind: SurrogateKind,
    /// Peak value at threshold.
    pub gamma: f64,
    /// Width scaling in 1/mV.
    pub beta: f64,
}

impl SurrogateSpec {
    pub fn new(kind: SurrogateKind, gamma: f64, beta: f64) -> Result<Self> {
        let s = SurrogateSpec { kind, gamma, beta };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid("surrogate.gamma", "must be positive and finite"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(invalid("surrogate.beta", "must be positive and finite"));
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, v: f64, v_th_t: f64) -> f64 {
        surrogate_gradient(v, v_th_t, self)
    }
}

/// Surrogate gradient psi for voltage `v` and effective threshold `v_th_t`.
#[inline]
pub fn surrogate_gradient(v: f64, v_th_t: f64, s: &SurrogateSpec) -> f64 {
    let x = v - v_th_t;
    match s.kind {
        SurrogateKind::PiecewiseLinear => s.gamma * (1.0 - s.beta * x.abs()).max(0.0),
        SurrogateKind::Exponential => s.gamma * (-s.beta * x.abs()).exp(),
        SurrogateKind::FastSigmoid => {
            let d = 1.0 + s.beta * x.abs();
            s.gamma / (d * d)
        }
        SurrogateKind::Arctan => {
            let u = s.beta * x;
            s.gamma / (1.0 + u * u)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct LifParamsRaw {
    #[serde(default = "default_dt")]
    dt: f64,
    tau_m: f64,
    v_th: f64,
    #[serde(default)]
    beta_a: f64,
    #[serde(default = "default_tau_a")]
    tau_a: f64,
    #[serde(default)]
    reset: ResetMode,
    surrogate: SurrogateSpec,
}

fn default_dt() -> f64 {
    1.0
}

fn default_tau_a() -> f64 {
    2000.0
}

/// Parameters of a recurrent LIF (beta_a = 0) or ALIF neuron.
///
/// The decay factors `alpha` and `rho` are always derived from the time
/// constants; they are never deserialized directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LifParamsRaw", into = "LifParamsRaw")]
pub struct LifParams {
    pub dt: f64,
    pub tau_m: f64,
    pub alpha: f64,
    pub v_th: f64,
    pub beta_a: f64,
    pub tau_a: f64,
    pub rho: f64,
    pub reset: ResetMode,
    pub surrogate: SurrogateSpec,
}

impl TryFrom<LifParamsRaw> for LifParams {
    type Error = crate::EpropError;

    fn try_from(r: LifParamsRaw) -> Result<Self> {
        LifParams::new(r.dt, r.tau_m, r.v_th, r.beta_a, r.tau_a, r.reset, r.surrogate)
    }
}

impl From<LifParams> for LifParamsRaw {
    fn from(p: LifParams) -> Self {
        LifParamsRaw {
            dt: p.dt,
            tau_m: p.tau_m,
            v_th: p.v_th,
            beta_a: p.beta_a,
            tau_a: p.tau_a,
            reset: p.reset,
            surrogate: p.surrogate,
        }
    }
}

impl LifParams {
    pub fn new(
        dt: f64,
        tau_m: f64,
        v_th: f64,
        beta_a: f64,
        tau_a: f64,
        reset: ResetMode,
        surrogate: SurrogateSpec,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt", "must be positive"));
        }
        if !(tau_m > 0.0) {
            return Err(invalid("tau_m", "must be positive"));
        }
        if !(tau_a > 0.0) {
            return Err(invalid("tau_a", "must be positive"));
        }
        if !v_th.is_finite() {
            return Err(invalid("v_th", "must be finite"));
        }
        if !(beta_a >= 0.0 && beta_a.is_finite()) {
            return Err(invalid("beta_a", "must be non-negative"));
        }
        if let ResetMode::ResetToValue { v_reset } = reset {
            if !v_reset.is_finite() {
                return Err(invalid("v_reset", "must be finite"));
            }
        }
        surrogate.validate()?;
        Ok(LifParams {
            dt,
            tau_m,
            alpha: (-dt / tau_m).exp(),
            v_th,
            beta_a,
            tau_a,
            rho: (-dt / tau_a).exp(),
            reset,
            surrogate,
        })
    }

    /// Plain LIF neuron with subtractive reset.
    pub fn lif(tau_m: f64, v_th: f64, surrogate: SurrogateSpec) -> Result<Self> {
        Self::new(1.0, tau_m, v_th, 0.0, default_tau_a(), ResetMode::SubtractThreshold, surrogate)
    }

    /// ALIF neuron with subtractive reset.
    pub fn alif(
        tau_m: f64,
        v_th: f64,
        beta_a: f64,
        tau_a: f64,
        surrogate: SurrogateSpec,
    ) -> Result<Self> {
        Self::new(1.0, tau_m, v_th, beta_a, tau_a, ResetMode::SubtractThreshold, surrogate)
    }

    pub fn is_adaptive(&self) -> bool {
        self.beta_a != 0.0
    }
}

/// Dynamic state of a recurrent neuron after a step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RecurrentNeuronState {
    pub v: f64,
    pub a: f64,
    pub z: bool,
    pub v_th_t: f64,
}

impl RecurrentNeuronState {
    /// Resting state for the given parameters.
    pub fn rest(p: &LifParams) -> Self {
        RecurrentNeuronState {
            v: 0.0,
            a: 0.0,
            z: false,
            v_th_t: p.v_th,
        }
    }

    #[inline]
    pub fn z_f64(&self) -> f64 {
        if self.z {
            1.0
        } else {
            0.0
        }
    }
}

/// Advance a recurrent neuron by one step.
///
/// `rec_drive` and `in_drive` are the already summed weighted spike inputs
/// arriving this step. The returned state carries the new spike flag.
pub fn step_recurrent(
    state: &RecurrentNeuronState,
    p: &LifParams,
    rec_drive: f64,
    in_drive: f64,
) -> Result<RecurrentNeuronState> {
    ensure_finite(rec_drive, "recurrent drive")?;
    ensure_finite(in_drive, "input drive")?;
    Ok(step_recurrent_unchecked(state, p, rec_drive, in_drive))
}

#[inline]
pub(crate) fn step_recurrent_unchecked(
    state: &RecurrentNeuronState,
    p: &LifParams,
    rec_drive: f64,
    in_drive: f64,
) -> RecurrentNeuronState {
    let z_prev = state.z_f64();
    let a = p.rho * state.a + z_prev;
    let v_th_t = p.v_th + p.beta_a * a;
    let v = match p.reset {
        ResetMode::SubtractThreshold => {
            p.alpha * state.v + rec_drive + in_drive - z_prev * v_th_t
        }
        ResetMode::ResetToValue { v_reset } => {
            let base = if state.z { v_reset } else { state.v };
            p.alpha * base + rec_drive + in_drive
        }
    };
    RecurrentNeuronState {
        v,
        a,
        z: v >= v_th_t,
        v_th_t,
    }
}

/// Non-spiking leaky-integrator output unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutState {
    pub y: f64,
    pub kappa: f64,
}

impl ReadoutState {
    pub fn new(dt: f64, tau_m_out: f64) -> Result<Self> {
        if !(dt > 0.0 && tau_m_out > 0.0) {
            return Err(invalid("tau_m_out", "time constants must be positive"));
        }
        Ok(ReadoutState {
            y: 0.0,
            kappa: (-dt / tau_m_out).exp(),
        })
    }

    pub fn with_kappa(kappa: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&kappa) {
            return Err(invalid("kappa", "must lie in [0, 1)"));
        }
        Ok(ReadoutState { y: 0.0, kappa })
    }
}

/// `y <- kappa * y + drive`.
pub fn step_readout(state: &ReadoutState, drive: f64) -> Result<ReadoutState> {
    ensure_finite(drive, "readout drive")?;
    Ok(ReadoutState {
        y: state.kappa * state.y + drive,
        kappa: state.kappa,
    })
}

/// Neuron that fires periodically and ignores its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IgnoreAndFireState {
    pub period: u64,
    pub phase: u64,
}

impl IgnoreAndFireState {
    pub fn new(period: i64, phase: i64) -> Result<Self> {
        if period <= 0 {
            return Err(invalid("period", "must be at least one step"));
        }
        if phase < 0 || phase >= period {
            return Err(invalid("phase", "must lie in [0, period)"));
        }
        Ok(IgnoreAndFireState {
            period: period as u64,
            phase: phase as u64,
        })
    }

    /// Period in steps for a target rate in spikes/s at step `dt` ms.
    pub fn period_for_rate(rate_hz: f64, dt: f64) -> Result<i64> {
        if !(rate_hz > 0.0 && dt > 0.0) {
            return Err(invalid("rate", "rate and dt must be positive"));
        }
        Ok((1000.0 / (rate_hz * dt)).round().max(1.0) as i64)
    }
}

/// Advance the counter; the neuron spikes when its phase wraps to zero.
#[inline]
pub fn step_ignore_and_fire(state: IgnoreAndFireState) -> (IgnoreAndFireState, bool) {
    let phase = (state.phase + 1) % state.period;
    (
        IgnoreAndFireState {
            period: state.period,
            phase,
        },
        phase == 0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pwl() -> SurrogateSpec {
        SurrogateSpec::new(SurrogateKind::PiecewiseLinear, 0.3, 1.0).unwrap()
    }

    fn params(alpha_tau: f64, v_th: f64, beta_a: f64, tau_a: f64) -> LifParams {
        LifParams::new(1.0, alpha_tau, v_th, beta_a, tau_a, ResetMode::SubtractThreshold, pwl())
            .unwrap()
    }

    #[test]
    fn zero_state_stays_silent() {
        let p = params(20.0, 1.0, 0.0, 100.0);
        let s = step_recurrent(&RecurrentNeuronState::rest(&p), &p, 0.0, 0.0).unwrap();
        assert_eq!(s.v, 0.0);
        assert!(!s.z);
    }

    #[test]
    fn membrane_decays_by_alpha() {
        // alpha = 0.5 <=> tau_m = 1 / ln 2
        let p = params(1.0 / std::f64::consts::LN_2, 10.0, 0.0, 100.0);
        assert!((p.alpha - 0.5).abs() < 1e-15);
        let s0 = RecurrentNeuronState {
            v: 1.0,
            a: 0.0,
            z: false,
            v_th_t: 10.0,
        };
        let s = step_recurrent(&s0, &p, 0.0, 0.0).unwrap();
        assert!((s.v - 0.5).abs() < 1e-15);
        assert!(!s.z);
    }

    #[test]
    fn adaptation_recursion() {
        // rho = 0.9
        let tau_a = -1.0 / 0.9f64.ln();
        let p = params(20.0, 1.0, 0.5, tau_a);
        assert!((p.rho - 0.9).abs() < 1e-15);
        let s0 = RecurrentNeuronState {
            v: 0.0,
            a: 1.0,
            z: true,
            v_th_t: 1.5,
        };
        let s = step_recurrent(&s0, &p, 0.0, 0.0).unwrap();
        assert!((s.a - 1.9).abs() < 1e-15);
        assert!((s.v_th_t - (1.0 + 0.5 * 1.9)).abs() < 1e-15);
    }

    #[test]
    fn subtractive_reset_uses_current_threshold() {
        let p = params(20.0, 1.0, 0.0, 100.0);
        let s0 = RecurrentNeuronState {
            v: 1.2,
            a: 0.0,
            z: true,
            v_th_t: 1.0,
        };
        let s = step_recurrent(&s0, &p, 0.0, 0.0).unwrap();
        assert!((s.v - (p.alpha * 1.2 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn reset_to_value_replaces_voltage() {
        let p = LifParams::new(
            1.0,
            20.0,
            1.0,
            0.0,
            100.0,
            ResetMode::ResetToValue { v_reset: -0.5 },
            pwl(),
        )
        .unwrap();
        let s0 = RecurrentNeuronState {
            v: 3.0,
            a: 0.0,
            z: true,
            v_th_t: 1.0,
        };
        let s = step_recurrent(&s0, &p, 0.1, 0.0).unwrap();
        assert!((s.v - (p.alpha * -0.5 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_drive_rejected() {
        let p = params(20.0, 1.0, 0.0, 100.0);
        let s = RecurrentNeuronState::rest(&p);
        assert!(step_recurrent(&s, &p, f64::NAN, 0.0).is_err());
        assert!(step_recurrent(&s, &p, 0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn decay_factors_match_time_constants() {
        let p = params(23.0, 1.0, 0.1, 700.0);
        assert!((p.alpha - (-1.0f64 / 23.0).exp()).abs() <= 1e-15);
        assert!((p.rho - (-1.0f64 / 700.0).exp()).abs() <= 1e-15);
        assert!(p.alpha > 0.0 && p.alpha < 1.0);
    }

    #[test]
    fn readout_cases() {
        let r = ReadoutState::with_kappa(0.0).unwrap();
        assert_eq!(step_readout(&r, 0.7).unwrap().y, 0.7);

        let r = ReadoutState { y: 2.0, kappa: 0.5 };
        assert_eq!(step_readout(&r, 0.0).unwrap().y, 1.0);

        let mut r = ReadoutState { y: 3.0, kappa: 0.8 };
        for t in 1..=10 {
            r = step_readout(&r, 0.0).unwrap();
            assert!((r.y - 3.0 * 0.8f64.powi(t)).abs() < 1e-12);
        }
        assert!(step_readout(&r, f64::NAN).is_err());
    }

    #[test]
    fn surrogates_peak_at_threshold() {
        for kind in [
            SurrogateKind::PiecewiseLinear,
            SurrogateKind::Exponential,
            SurrogateKind::FastSigmoid,
            SurrogateKind::Arctan,
        ] {
            let s = SurrogateSpec::new(kind, 0.3, 2.0).unwrap();
            assert_eq!(s.eval(0.6, 0.6), 0.3, "{kind:?}");
        }
    }

    #[test]
    fn piecewise_linear_clamps() {
        let s = SurrogateSpec::new(SurrogateKind::PiecewiseLinear, 0.3, 2.0).unwrap();
        assert_eq!(s.eval(1.5, 1.0), 0.0);
        assert_eq!(s.eval(0.0, 1.0), 0.0);
    }

    #[test]
    fn exponential_at_one_width() {
        let s = SurrogateSpec::new(SurrogateKind::Exponential, 0.3, 4.0).unwrap();
        let psi = s.eval(1.25, 1.0);
        assert!((psi - 0.3 / std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn ignore_and_fire_counts() {
        let period = IgnoreAndFireState::period_for_rate(5.0, 1.0).unwrap();
        assert_eq!(period, 200);
        let mut s = IgnoreAndFireState::new(period, 17).unwrap();
        let mut n = 0;
        for _ in 0..20_000 {
            let (next, z) = step_ignore_and_fire(s);
            s = next;
            n += z as usize;
        }
        assert_eq!(n, 100);

        let mut s = IgnoreAndFireState::new(1, 0).unwrap();
        for _ in 0..10 {
            let (next, z) = step_ignore_and_fire(s);
            assert!(z);
            s = next;
        }
        assert!(IgnoreAndFireState::new(0, 0).is_err());
        assert!(IgnoreAndFireState::new(-3, 0).is_err());
    }

    #[test]
    fn ignore_and_fire_phases_shift_trains() {
        let run = |phase| {
            let mut s = IgnoreAndFireState::new(200, phase).unwrap();
            (0..1000)
                .filter_map(|t| {
                    let (next, z) = step_ignore_and_fire(s);
                    s = next;
                    z.then_some(t)
                })
                .collect::<Vec<_>>()
        };
        let a = run(0);
        let b = run(100);
        assert_eq!(a.len(), b.len());
        for (ta, tb) in a.iter().zip(&b) {
            assert_eq!((ta + 200 - tb) % 200, 100);
        }
    }
}
