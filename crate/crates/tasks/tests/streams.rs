//! Task streams driving real networks.

use eprop_core::config::{NetworkConfig, SimMode};
use eprop_core::engine::training::{TaskStream, TrainingSchedule};
use eprop_core::signals::LossKind;
use eprop_core::Network;
use eprop_tasks::evidence::{EvidenceStream, EvidenceTaskConfig};
use eprop_tasks::pattern::{PatternStream, PatternTaskConfig};

fn short_evidence() -> EvidenceTaskConfig {
    EvidenceTaskConfig {
        n_cues: 3,
        cue_duration: 20,
        inter_cue: 10,
        delay: 30,
        recall: 20,
        ..Default::default()
    }
}

#[test]
fn evidence_batches_train_in_both_modes_identically() {
    let cfg = short_evidence();
    let mut checksums = Vec::new();
    for mode in [SimMode::TimeDriven, SimMode::EventDriven] {
        let mut net_cfg = NetworkConfig::small(cfg.n_in(), 12, 2, 3).unwrap();
        net_cfg.loss = LossKind::CrossEntropySoftmax;
        net_cfg.policy.batch_size = 2;
        net_cfg.mode = mode;
        let mut net = Network::build(&net_cfg).unwrap();
        let mut stream = EvidenceStream::new(4, cfg.clone()).unwrap();
        let schedule = TrainingSchedule {
            iterations: 3,
            batch_size: 2,
            eval_every: 3,
            eval_iterations: 1,
        };
        let run = net.run_training(&mut stream, &schedule, |_| {}).unwrap();
        assert_eq!(run.metrics.len(), 4);
        assert!(run.metrics.iter().all(|m| m.prediction_error.is_some()));
        checksums.push(net.weights().unwrap().checksum());
    }
    assert_eq!(checksums[0], checksums[1]);
}

#[test]
fn evidence_train_and_test_streams_differ() {
    let mut s = EvidenceStream::new(9, short_evidence()).unwrap();
    let train = s.train_batch(0, 4).unwrap();
    let test = s.test_batch(0, 4).unwrap();
    assert_ne!(train, test);
    assert_eq!(train, s.train_batch(0, 4).unwrap());
}

#[test]
fn pattern_stream_repeats_one_frozen_sample() {
    let cfg = PatternTaskConfig {
        duration: 200,
        n_in: 10,
        ..Default::default()
    };
    let mut s = PatternStream::new(2, &cfg).unwrap();
    let a = s.train_batch(0, 1).unwrap();
    let b = s.train_batch(7, 1).unwrap();
    assert_eq!(a, b);
    a[0].validate(10, 1).unwrap();
}
