//! Losses, error signals, softmax coupling and learning-signal broadcast.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EpropError, Result};
use crate::config::WeightInit;

/// Floor applied to probabilities inside the cross-entropy logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mse,
    CrossEntropySoftmax,
    TemporalMse,
}

impl LossKind {
    /// Steps of extra latency the readout exchange adds in the event-driven engine.
    pub fn exchange_latency(self) -> i64 {
        match self {
            LossKind::CrossEntropySoftmax => 1,
            _ => 0,
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    softmax_into(y, &mut out);
    out
}

pub(crate) fn softmax_into(y: &[f64], out: &mut [f64]) {
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(y) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Incremental loss and error vector for one step.
///
/// `y` holds readout voltages; for cross-entropy the softmax is applied here.
pub fn step_loss_and_error(
    kind: LossKind,
    y: &[f64],
    target: &[f64],
    window: bool,
) -> Result<(f64, Vec<f64>)> {
    let mut err = vec![0.0; y.len()];
    let mut scratch = vec![0.0; y.len()];
    let loss = loss_and_error_into(kind, y, target, window, &mut err, &mut scratch)?;
    Ok((loss, err))
}

pub(crate) fn loss_and_error_into(
    kind: LossKind,
    y: &[f64],
    target: &[f64],
    window: bool,
    err: &mut [f64],
    scratch: &mut [f64],
) -> Result<f64> {
    if y.len() != target.len() {
        return Err(EpropError::Dimension {
            context: "target row",
            expected: y.len(),
            actual: target.len(),
        });
    }
    if !window {
        err.iter_mut().for_each(|e| *e = 0.0);
        return Ok(0.0);
    }
    let k = y.len() as f64;
    let mut loss = 0.0;
    match kind {
        LossKind::Mse => {
            for ((e, &yk), &tk) in err.iter_mut().zip(y).zip(target) {
                let diff = yk - tk;
                *e = diff;
                loss += 0.5 * diff * diff;
            }
        }
        LossKind::TemporalMse => {
            for ((e, &yk), &tk) in err.iter_mut().zip(y).zip(target) {
                let diff = yk - tk;
                *e = 2.0 / k * diff;
                loss += diff * diff / k;
            }
        }
        LossKind::CrossEntropySoftmax => {
            softmax_into(y, scratch);
            for ((e, &pk), &tk) in err.iter_mut().zip(scratch.iter()).zip(target) {
                *e = pk - tk;
                loss -= tk * pk.max(PROB_FLOOR).ln();
            }
        }
    }
    Ok(loss)
}

/// Fixed random feedback weights B (J rows, K columns).
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackMatrix {
    pub n_rec: usize,
    pub n_out: usize,
    data: Vec<f64>,
}

impl FeedbackMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rec = rows.len();
        let n_out = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rec * n_out);
        for r in rows {
            if r.len() != n_out {
                return Err(EpropError::Dimension {
                    context: "feedback row",
                    expected: n_out,
                    actual: r.len(),
                });
            }
            data.extend(r);
        }
        Ok(FeedbackMatrix { n_rec, n_out, data })
    }

    pub fn random<R: Rng>(n_rec: usize, n_out: usize, init: &WeightInit, rng: &mut R) -> Result<Self> {
        let data = (0..n_rec * n_out)
            .map(|_| init.sample(rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeedbackMatrix { n_rec, n_out, data })
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[j * self.n_out + k]
    }

    /// `L_j = sum_k B_jk E_k`.
    pub fn learning_signal(&self, err: &[f64]) -> Result<Vec<f64>> {
        if err.len() != self.n_out {
            return Err(EpropError::Dimension {
                context: "error vector",
                expected: self.n_out,
                actual: err.len(),
            });
        }
        let mut out = vec![0.0; self.n_rec];
        self.learning_signal_into(err, &mut out);
        Ok(out)
    }

    pub(crate) fn learning_signal_into(&self, err: &[f64], out: &mut [f64]) {
        for (j, l) in out.iter_mut().enumerate() {
            let row = &self.data[j * self.n_out..(j + 1) * self.n_out];
            let mut acc = 0.0;
            for (b, e) in row.iter().zip(err) {
                acc += b * e;
            }
            *l = acc;
        }
    }
}

/// Class with the largest mean signal over the steps where `window` is set.
///
/// Ties go to the lowest index.
pub fn prediction(signals: &[Vec<f64>], window: &[bool]) -> Result<usize> {
    if signals.len() != window.len() {
        return Err(EpropError::Dimension {
            context: "prediction window",
            expected: signals.len(),
            actual: window.len(),
        });
    }
    let k = signals.first().map_or(0, Vec::len);
    let mut sums = vec![0.0; k];
    let mut count = 0usize;
    for (row, _) in signals.iter().zip(window).filter(|(_, &w)| w) {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
        count += 1;
    }
    if count == 0 || k == 0 {
        return Err(EpropError::Empty("learning window"));
    }
    Ok(argmax_first(&sums))
}

pub(crate) fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[0.0, 2f64.ln()]);
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-15);
        for x in softmax(&[7.0; 5]) {
            assert!((x - 0.2).abs() < 1e-15);
        }
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn loss_examples() {
        for kind in [LossKind::Mse, LossKind::TemporalMse] {
            let (l, e) = step_loss_and_error(kind, &[0.3, -1.0], &[0.3, -1.0], true).unwrap();
            assert_eq!(l, 0.0);
            assert_eq!(e, vec![0.0, 0.0]);
        }
        // y = (0, 0) gives pi = (0.5, 0.5)
        let (l, e) =
            step_loss_and_error(LossKind::CrossEntropySoftmax, &[0.0, 0.0], &[1.0, 0.0], true)
                .unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert_eq!(e, vec![-0.5, 0.5]);

        for kind in [LossKind::Mse, LossKind::TemporalMse, LossKind::CrossEntropySoftmax] {
            let (l, e) = step_loss_and_error(kind, &[3.0, 1.0], &[0.0, 1.0], false).unwrap();
            assert_eq!(l, 0.0);
            assert_eq!(e, vec![0.0, 0.0]);
        }
        assert!(step_loss_and_error(LossKind::Mse, &[0.0], &[0.0, 1.0], true).is_err());
    }

    #[test]
    fn temporal_mse_scaling() {
        let (l, e) = step_loss_and_error(LossKind::TemporalMse, &[1.0, 0.0], &[0.0, 0.0], true)
            .unwrap();
        assert!((l - 0.5).abs() < 1e-15);
        assert_eq!(e, vec![1.0, 0.0]);
    }

    #[test]
    fn learning_signal_examples() {
        let b = FeedbackMatrix::from_rows(vec![vec![1.0, -1.0]]).unwrap();
        let l = b.learning_signal(&[0.2, 0.5]).unwrap();
        assert!((l[0] + 0.3).abs() < 1e-15);
        assert_eq!(b.learning_signal(&[0.0, 0.0]).unwrap(), vec![0.0]);
        assert!(b.learning_signal(&[0.0]).is_err());
    }

    #[test]
    fn prediction_examples() {
        let s = vec![vec![0.9, 0.1]];
        assert_eq!(prediction(&s, &[true]).unwrap(), 0);
        let s = vec![vec![0.5, 0.5]];
        assert_eq!(prediction(&s, &[true]).unwrap(), 0);
        // masked-out steps are ignored
        let s = vec![vec![0.0, 10.0], vec![1.0, 0.0], vec![0.8, 0.6]];
        let w = [false, true, true];
        let brute = {
            let mut m = [0.0, 0.0];
            for t in 1..3 {
                m[0] += s[t][0] / 2.0;
                m[1] += s[t][1] / 2.0;
            }
            if m[1] > m[0] {
                1
            } else {
                0
            }
        };
        assert_eq!(prediction(&s, &w).unwrap(), brute);
        assert!(prediction(&s, &[false, false, false]).is_err());
    }

    fn vecs(k: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(-5.0f64..5.0, k),
            prop::collection::vec(-5.0f64..5.0, k),
        )
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(y in prop::collection::vec(-20.0f64..20.0, 1..8), c in -50.0f64..50.0) {
            let p = softmax(&y);
            let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
            let q = softmax(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn cross_entropy_error_is_gradient(y in prop::collection::vec(-3.0f64..3.0, 2..6), hot in 0usize..6) {
            let k = y.len();
            let mut target = vec![0.0; k];
            target[hot % k] = 1.0;
            let (_, e) = step_loss_and_error(LossKind::CrossEntropySoftmax, &y, &target, true).unwrap();
            let h = 1e-6;
            for i in 0..k {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[i] += h;
                ym[i] -= h;
                let lp = step_loss_and_error(LossKind::CrossEntropySoftmax, &yp, &target, true).unwrap().0;
                let lm = step_loss_and_error(LossKind::CrossEntropySoftmax, &ym, &target, true).unwrap().0;
                let fd = (lp - lm) / (2.0 * h);
                prop_assert!((fd - e[i]).abs() < 1e-6, "fd {} vs {}", fd, e[i]);
            }
        }

        #[test]
        fn mse_errors_are_gradients((y, t) in vecs(3)) {
            for kind in [LossKind::Mse, LossKind::TemporalMse] {
                let (_, e) = step_loss_and_error(kind, &y, &t, true).unwrap();
                let h = 1e-6;
                for i in 0..3 {
                    let mut yp = y.clone();
                    let mut ym = y.clone();
                    yp[i] += h;
                    ym[i] -= h;
                    let fd = (step_loss_and_error(kind, &yp, &t, true).unwrap().0
                        - step_loss_and_error(kind, &ym, &t, true).unwrap().0) / (2.0 * h);
                    prop_assert!((fd - e[i]).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn learning_signal_is_linear(
            rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..5),
            (e1, e2) in vecs(3),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
        ) {
            let fb = FeedbackMatrix::from_rows(rows).unwrap();
            let mix: Vec<f64> = e1.iter().zip(&e2).map(|(x, y)| a * x + b * y).collect();
            let l = fb.learning_signal(&mix).unwrap();
            let l1 = fb.learning_signal(&e1).unwrap();
            let l2 = fb.learning_signal(&e2).unwrap();
            for j in 0..l.len() {
                prop_assert!((l[j] - (a * l1[j] + b * l2[j])).abs() < 1e-12);
            }
        }
    }
}
