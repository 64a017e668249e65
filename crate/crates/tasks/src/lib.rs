//! Benchmark tasks for e-prop training: frozen-noise pattern generation,
//! evidence accumulation, N-MNIST event streams, and the ignore-and-fire
//! scaling workload.

pub mod error;
pub mod evidence;
pub mod nmnist;
pub mod pattern;
pub mod scaling;

use rand::Rng;

pub use error::{Result, TaskError};

/// Bernoulli approximation of a Poisson train over steps `[from, to)`.
pub fn poisson_train<R: Rng>(rng: &mut R, rate_hz: f64, dt_ms: f64, from: usize, to: usize) -> Vec<u32> {
    let p = rate_hz * dt_ms / 1000.0;
    (from..to).filter(|_| rng.random::<f64>() < p).map(|t| t as u32).collect()
}

/// Mix a base seed with stream coordinates (splitmix64 finalizer).
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
