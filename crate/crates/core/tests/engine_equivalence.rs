use eprop_core::config::{Connectivity, NetworkConfig, SimMode, UpdateKind};
use eprop_core::optim::OptimizerConfig;
use eprop_core::plasticity::{RegMode, RegularizationParams};
use eprop_core::signals::LossKind;
use eprop_core::{Network, SampleSpec, TargetSignal, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_sample(n_in: usize, n_out: usize, t: usize, rate: f64, rng: &mut ChaCha8Rng, classes: bool) -> SampleSpec {
    let input_spikes = (0..n_in)
        .map(|_| (0..t as u32).filter(|_| rng.random::<f64>() < rate).collect())
        .collect();
    let (target, label) = if classes {
        let label = rng.random_range(0..n_out);
        let window = (0..t).map(|i| i >= t / 2).collect();
        (TargetSignal::one_hot(label, n_out, window).unwrap(), Some(label))
    } else {
        let values = (0..t)
            .map(|i| (0..n_out).map(|k| (i as f64 * 0.2 + k as f64).sin()).collect())
            .collect();
        (
            TargetSignal {
                values,
                window: vec![true; t],
            },
            None,
        )
    };
    SampleSpec {
        duration: t,
        input_spikes,
        target,
        label,
    }
}

fn base(seed: u64) -> NetworkConfig {
    let mut cfg = NetworkConfig::small(6, 8, 2, seed).unwrap();
    cfg.input.init = eprop_core::config::WeightInit::Normal { mean: 0.3, std: 0.4 };
    cfg.optimizer = OptimizerConfig::adam(5e-3);
    cfg
}

/// Run both modes over the same samples and return per-sample losses and checksums.
fn run_both(cfg: &NetworkConfig, iterations: usize, batch: usize, classes: bool) -> [(Vec<f64>, u64, Vec<u64>); 2] {
    let mut out = Vec::new();
    for mode in [SimMode::TimeDriven, SimMode::EventDriven] {
        let mut c = cfg.clone();
        c.mode = mode;
        let mut net = Network::build(&c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + 100);
        let mut losses = Vec::new();
        let mut spikes = Vec::new();
        for it in 0..iterations {
            let samples: Vec<SampleSpec> = (0..batch)
                .map(|_| random_sample(c.n_in, c.n_out, 30, 0.15, &mut rng, classes))
                .collect();
            let plastic = it % 3 != 2;
            for r in net.run_iteration(&samples, plastic).unwrap() {
                losses.push(r.loss);
                spikes.push(r.spikes_recurrent);
            }
        }
        let checksum = net.weights().unwrap().checksum();
        out.push((losses, checksum, spikes));
    }
    out.try_into().unwrap()
}

fn assert_identical(cfg: &NetworkConfig, iterations: usize, batch: usize, classes: bool) {
    let [td, ed] = run_both(cfg, iterations, batch, classes);
    assert!(td.2.iter().sum::<u64>() > 0, "network must spike");
    assert_eq!(td.2, ed.2, "spike counts differ");
    for (i, (a, b)) in td.0.iter().zip(&ed.0).enumerate() {
        assert_eq!(a.to_bits(), b.to_bits(), "sample {i}: {a} vs {b}");
    }
    assert_eq!(td.1, ed.1, "weights differ");
}

#[test]
fn modes_agree_bitwise_for_all_small_delays() {
    for d in 0..=2 {
        for d_ls in 0..=2 {
            let mut cfg = base(7);
            cfg.delays.d = d;
            cfg.delays.d_ls = d_ls;
            assert_identical(&cfg, 5, 1, false);
        }
    }
}

#[test]
fn modes_agree_with_cross_entropy_and_batches() {
    let mut cfg = base(3);
    cfg.loss = LossKind::CrossEntropySoftmax;
    cfg.policy.batch_size = 3;
    cfg.delays.d_ls = 1;
    assert_identical(&cfg, 4, 3, true);
}

#[test]
fn modes_agree_with_adaptation_and_regularization() {
    for mode in [RegMode::Static, RegMode::Cumulative, RegMode::Ema { beta: 0.9 }] {
        let mut cfg = base(11);
        cfg.n_lif = 4;
        cfg.n_alif = 4;
        cfg.regularization = RegularizationParams {
            c_reg: 0.5,
            f_star: 20.0,
            mode,
        };
        assert_identical(&cfg, 4, 2, false);
    }
}

#[test]
fn modes_agree_with_gradient_descent_and_sparse_connectivity() {
    let mut cfg = base(5);
    cfg.optimizer = OptimizerConfig::gd(0.05);
    cfg.recurrent.connectivity = Connectivity::FixedInDegree { k: 3 };
    cfg.input.connectivity = Connectivity::FixedInDegree { k: 2 };
    assert_identical(&cfg, 4, 2, false);
}

#[test]
fn modes_agree_with_frozen_projections() {
    let mut cfg = base(9);
    cfg.input.plastic = false;
    cfg.recurrent.plastic = false;
    assert_identical(&cfg, 4, 1, false);
}

#[test]
fn eprop_plus_event_driven_runs_and_learns_something() {
    let mut cfg = base(2).with_variant(Variant::EpropPlus).unwrap();
    cfg.delays.cutoff = 10;
    assert_eq!(cfg.policy.kind, UpdateKind::PerSpike);
    let mut net = Network::build(&cfg).unwrap();
    let before = net.weights().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let s = random_sample(cfg.n_in, cfg.n_out, 40, 0.15, &mut rng, true);
        let r = net.run_sample(&s, true).unwrap();
        assert!(r.loss.is_finite());
    }
    let after = net.weights().unwrap();
    assert_ne!(before.checksum(), after.checksum());
    // eval samples leave weights untouched
    let s = random_sample(cfg.n_in, cfg.n_out, 40, 0.15, &mut rng, true);
    net.run_sample(&s, false).unwrap();
    assert_eq!(net.weights().unwrap().checksum(), after.checksum());
}

