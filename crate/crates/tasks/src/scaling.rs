//! Ignore-and-fire scaling workload: constant in-degrees, so doubling the
//! scale doubles neurons and synapses.

use eprop_core::engine::scaling::{ScalingNetwork, ScalingParams};
use eprop_core::neuron::IgnoreAndFireState;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{config, Result};

/// Sizes at scale 1; populations grow linearly with the scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingTaskConfig {
    pub n_rec: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub k_in: usize,
    pub k_rec: usize,
    pub k_out: usize,
    pub feedback_out_degree: usize,
    pub rate_hz: f64,
    pub dt: f64,
}

impl Default for ScalingTaskConfig {
    fn default() -> Self {
        // the original layout at 128 000 neurons uses in-degrees of
        // 100 / 10 000 / 1000; the recurrent one is reduced with the size
        ScalingTaskConfig {
            n_rec: 10_000,
            n_in: 1000,
            n_out: 10,
            k_in: 100,
            k_rec: 100,
            k_out: 1000,
            feedback_out_degree: 100,
            rate_hz: 5.0,
            dt: 1.0,
        }
    }
}

/// Distinct sources for one target, optionally excluding the target itself.
fn draw_sources<R: Rng>(rng: &mut R, n_src: usize, k: usize, exclude: Option<usize>) -> Vec<u32> {
    let pool = n_src - usize::from(exclude.is_some());
    let mut v: Vec<u32> = index::sample(rng, pool, k)
        .into_iter()
        .map(|i| match exclude {
            Some(x) if i >= x => (i + 1) as u32,
            _ => i as u32,
        })
        .collect();
    v.sort_unstable();
    v
}

pub fn gen_scaling_network(scale: usize, seed: u64, cfg: &ScalingTaskConfig) -> Result<ScalingNetwork> {
    if scale == 0 {
        return Err(config("scale must be at least 1"));
    }
    let n_rec = cfg.n_rec * scale;
    let n_in = cfg.n_in * scale;
    let n_out = cfg.n_out * scale;
    for (name, k, pop) in [
        ("input in-degree", cfg.k_in, n_in),
        ("recurrent in-degree", cfg.k_rec, n_rec),
        ("readout in-degree", cfg.k_out, n_rec),
        ("feedback out-degree", cfg.feedback_out_degree, n_rec),
    ] {
        if k >= pop {
            return Err(config(format!(
                "{name} {k} must stay below the population size {pop} to avoid multapses"
            )));
        }
    }
    let period = IgnoreAndFireState::period_for_rate(cfg.rate_hz, cfg.dt)? as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 7, scale as u64));
    let phases = (0..n_rec).map(|_| rng.random_range(0..period)).collect();
    let init = |k: usize| Normal::new(0.0, 1.0 / (k as f64).sqrt()).expect("positive std");
    let mut edges = |n_src: usize, n_tgt: usize, k: usize, autapses: bool| {
        let dist = init(k);
        let mut out = Vec::with_capacity(n_tgt * k);
        for t in 0..n_tgt {
            let exclude = (!autapses).then_some(t);
            for s in draw_sources(&mut rng, n_src, k, exclude) {
                out.push((s, t as u32, dist.sample(&mut rng)));
            }
        }
        out
    };
    let input = edges(n_in, n_rec, cfg.k_in, true);
    let recurrent = edges(n_rec, n_rec, cfg.k_rec, false);
    let output = edges(n_rec, n_out, cfg.k_out, true);
    // feedback fans out from each readout to distinct recurrent neurons
    let feedback = edges(n_rec, n_out, cfg.feedback_out_degree, true)
        .into_iter()
        .map(|(j, k, b)| (k, j, b))
        .collect();
    Ok(ScalingNetwork {
        params: ScalingParams {
            n_rec,
            n_in,
            n_out,
            rate_hz: cfg.rate_hz,
            dt: cfg.dt,
            k_in: cfg.k_in,
            k_rec: cfg.k_rec,
            k_out: cfg.k_out,
            feedback_out_degree: cfg.feedback_out_degree,
            seed,
        },
        period,
        phases,
        input,
        recurrent,
        output,
        feedback,
    })
}
