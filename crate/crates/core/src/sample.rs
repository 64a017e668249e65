//! Training samples: input spike trains, targets and the learning window.

use serde::{Deserialize, Serialize};

use crate::error::{EpropError, Result};

/// Per-step targets and learning-window mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSignal {
    /// `values[t][k]`: target of readout `k` at step `t` (0-based).
    pub values: Vec<Vec<f64>>,
    pub window: Vec<bool>,
}

impl TargetSignal {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// One-hot class target over `duration` steps with the given window.
    pub fn one_hot(label: usize, n_classes: usize, window: Vec<bool>) -> Result<Self> {
        if label >= n_classes {
            return Err(EpropError::Dimension {
                context: "class label",
                expected: n_classes,
                actual: label,
            });
        }
        let mut row = vec![0.0; n_classes];
        row[label] = 1.0;
        Ok(TargetSignal {
            values: vec![row; window.len()],
            window,
        })
    }
}

/// One sample of `duration` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub duration: usize,
    /// Spike steps per input channel, each in `[0, duration)` and increasing.
    pub input_spikes: Vec<Vec<u32>>,
    pub target: TargetSignal,
    pub label: Option<usize>,
}

impl SampleSpec {
    pub fn validate(&self, n_in: usize, n_out: usize) -> Result<()> {
        if self.input_spikes.len() != n_in {
            return Err(EpropError::Dimension {
                context: "input channels",
                expected: n_in,
                actual: self.input_spikes.len(),
            });
        }
        if self.target.values.len() != self.duration || self.target.window.len() != self.duration {
            return Err(EpropError::Dimension {
                context: "target length",
                expected: self.duration,
                actual: self.target.values.len().min(self.target.window.len()),
            });
        }
        if let Some(row) = self.target.values.iter().find(|r| r.len() != n_out) {
            return Err(EpropError::Dimension {
                context: "target row",
                expected: n_out,
                actual: row.len(),
            });
        }
        for train in &self.input_spikes {
            let mut prev: Option<u32> = None;
            for &t in train {
                if t as usize >= self.duration || prev.is_some_and(|p| t <= p) {
                    return Err(EpropError::InvalidConfig(format!(
                        "input spike times must be increasing and below {}",
                        self.duration
                    )));
                }
                prev = Some(t);
            }
        }
        Ok(())
    }

    /// Dense per-step view: `grid[t]` lists the channels spiking at step t.
    pub fn spikes_by_step(&self) -> Vec<Vec<u32>> {
        let mut grid = vec![Vec::new(); self.duration];
        for (i, train) in self.input_spikes.iter().enumerate() {
            for &t in train {
                grid[t as usize].push(i as u32);
            }
        }
        grid
    }

    pub fn input_spike_count(&self) -> usize {
        self.input_spikes.iter().map(Vec::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SampleSpec {
        SampleSpec {
            duration: 4,
            input_spikes: vec![vec![0, 2], vec![3]],
            target: TargetSignal {
                values: vec![vec![0.0]; 4],
                window: vec![true; 4],
            },
            label: None,
        }
    }

    #[test]
    fn validation() {
        assert!(spec().validate(2, 1).is_ok());
        assert!(spec().validate(3, 1).is_err());
        assert!(spec().validate(2, 2).is_err());
        let mut s = spec();
        s.input_spikes[0] = vec![2, 2];
        assert!(s.validate(2, 1).is_err());
        s.input_spikes[0] = vec![4];
        assert!(s.validate(2, 1).is_err());
    }

    #[test]
    fn grid_is_source_ascending() {
        let mut s = spec();
        s.input_spikes = vec![vec![1], vec![1]];
        assert_eq!(s.spikes_by_step()[1], vec![0, 1]);
    }

    #[test]
    fn one_hot_rows_sum_to_one() {
        let t = TargetSignal::one_hot(1, 3, vec![false, true]).unwrap();
        assert!(t.values.iter().all(|r| r.iter().sum::<f64>() == 1.0));
        assert!(TargetSignal::one_hot(3, 3, vec![true]).is_err());
    }
}
