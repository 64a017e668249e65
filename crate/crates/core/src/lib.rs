//! e-prop for recurrent spiking networks: neuron models, eligibility
//! traces, learning signals, history archives and the time-driven and
//! event-driven simulation engines.

pub mod algorithms;
pub mod config;
pub mod engine;
pub mod error;
pub mod history;
pub mod neuron;
pub mod optim;
pub mod plasticity;
pub mod sample;
pub mod signals;
pub mod verify;

pub use config::{NetworkConfig, SimMode, Variant};
pub use engine::{Network, ProjectionKind, RecordLevel, SampleResult};
pub use error::{EpropError, Result};
pub use sample::{SampleSpec, TargetSignal};
