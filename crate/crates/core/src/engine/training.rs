//! Iteration loop with evaluation phases and per-iteration metrics.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{EpropError, Result};
use crate::sample::SampleSpec;

use super::{Network, SampleResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Test,
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub phase: Phase,
    /// Mean over the iteration's samples of the summed per-step loss.
    pub loss: f64,
    /// Fraction of misclassified samples; empty for regression tasks.
    pub prediction_error: Option<f64>,
    pub spikes_recurrent: u64,
    pub runtime_s: f64,
}

/// Supplies training and evaluation mini-batches.
pub trait TaskStream {
    fn train_batch(&mut self, iteration: usize, batch_size: usize) -> Result<Vec<SampleSpec>>;
    fn test_batch(&mut self, iteration: usize, batch_size: usize) -> Result<Vec<SampleSpec>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSchedule {
    pub iterations: usize,
    pub batch_size: usize,
    /// Run an evaluation phase after every `eval_every` training iterations (0 disables).
    pub eval_every: usize,
    /// Evaluation iterations per phase.
    pub eval_iterations: usize,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        TrainingSchedule {
            iterations: 100,
            batch_size: 1,
            eval_every: 0,
            eval_iterations: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub metrics: Vec<IterationMetrics>,
    pub simulated_steps: i64,
    pub runtime_s: f64,
}

impl TrainingRun {
    /// Simulated biological time divided by wall-clock runtime.
    pub fn real_time_factor(&self, dt_ms: f64) -> f64 {
        self.simulated_steps as f64 * dt_ms / 1000.0 / self.runtime_s.max(f64::MIN_POSITIVE)
    }
}

/// Aggregate a batch of sample results into one metrics row.
pub fn summarize(
    iteration: usize,
    phase: Phase,
    batch: &[SampleSpec],
    results: &[SampleResult],
    runtime_s: f64,
) -> IterationMetrics {
    let n = results.len().max(1) as f64;
    let loss = results.iter().map(|r| r.loss).sum::<f64>() / n;
    let labeled: Vec<(Option<usize>, usize)> = batch
        .iter()
        .zip(results)
        .filter_map(|(s, r)| s.label.map(|l| (r.prediction, l)))
        .collect();
    let prediction_error = (!labeled.is_empty()).then(|| {
        labeled.iter().filter(|(p, l)| *p != Some(*l)).count() as f64 / labeled.len() as f64
    });
    IterationMetrics {
        iteration,
        phase,
        loss,
        prediction_error,
        spikes_recurrent: results.iter().map(|r| r.spikes_recurrent).sum(),
        runtime_s,
    }
}

impl Network {
    fn eval_phase(
        &mut self,
        task: &mut dyn TaskStream,
        iteration: usize,
        schedule: &TrainingSchedule,
        on_row: &mut dyn FnMut(&IterationMetrics),
        rows: &mut Vec<IterationMetrics>,
    ) -> Result<()> {
        let before = self.weights()?.checksum();
        for e in 0..schedule.eval_iterations {
            let batch = task.test_batch(iteration * schedule.eval_iterations + e, schedule.batch_size)?;
            let clock = Instant::now();
            let results = self.run_iteration(&batch, false)?;
            let row = summarize(iteration, Phase::Test, &batch, &results, clock.elapsed().as_secs_f64());
            on_row(&row);
            rows.push(row);
        }
        if self.weights()?.checksum() != before {
            return Err(EpropError::Protocol("evaluation changed a weight".into()));
        }
        Ok(())
    }

    /// Train for `schedule.iterations` iterations, interleaving evaluation
    /// phases. `on_row` sees every metrics row as soon as it exists.
    pub fn run_training(
        &mut self,
        task: &mut dyn TaskStream,
        schedule: &TrainingSchedule,
        mut on_row: impl FnMut(&IterationMetrics),
    ) -> Result<TrainingRun> {
        if schedule.batch_size == 0 {
            return Err(EpropError::Empty("mini-batch"));
        }
        let start_step = self.now;
        let clock = Instant::now();
        let mut rows = Vec::new();
        for it in 0..schedule.iterations {
            let batch = task.train_batch(it, schedule.batch_size)?;
            let iter_clock = Instant::now();
            let results = self.run_iteration(&batch, true)?;
            let row = summarize(it, Phase::Train, &batch, &results, iter_clock.elapsed().as_secs_f64());
            on_row(&row);
            rows.push(row);
            if schedule.eval_every > 0 && (it + 1) % schedule.eval_every == 0 {
                self.eval_phase(task, it, schedule, &mut on_row, &mut rows)?;
            }
        }
        self.flush()?;
        Ok(TrainingRun {
            metrics: rows,
            simulated_steps: self.now - start_step,
            runtime_s: clock.elapsed().as_secs_f64(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::TargetSignal;

    fn labeled(label: usize) -> SampleSpec {
        SampleSpec {
            duration: 2,
            input_spikes: vec![],
            target: TargetSignal::one_hot(label, 2, vec![true, true]).unwrap(),
            label: Some(label),
        }
    }

    #[test]
    fn summary_counts_errors_and_averages_loss() {
        let batch = vec![labeled(0), labeled(1), labeled(1)];
        let results = vec![
            SampleResult {
                loss: 1.0,
                prediction: Some(0),
                spikes_recurrent: 2,
                ..Default::default()
            },
            SampleResult {
                loss: 2.0,
                prediction: Some(0),
                spikes_recurrent: 3,
                ..Default::default()
            },
            SampleResult {
                loss: 3.0,
                prediction: None,
                ..Default::default()
            },
        ];
        let m = summarize(4, Phase::Train, &batch, &results, 0.5);
        assert_eq!(m.loss, 2.0);
        assert_eq!(m.prediction_error, Some(2.0 / 3.0));
        assert_eq!(m.spikes_recurrent, 5);
    }

    #[test]
    fn regression_has_no_prediction_error() {
        let mut s = labeled(0);
        s.label = None;
        let m = summarize(0, Phase::Test, &[s], &[SampleResult::default()], 0.0);
        assert_eq!(m.prediction_error, None);
    }
}
