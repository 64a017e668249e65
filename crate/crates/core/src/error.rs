use thiserror::Error;

/// Errors raised by the e-prop engine and its building blocks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EpropError {
    #[error("non-finite numeric input: {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("history protocol violation: {0}")]
    Protocol(String),

    #[error("archive entries ({from}, {to}] are no longer available (missing step {missing})")]
    ArchiveGap { from: i64, to: i64, missing: i64 },

    #[error("update history corrupted: no registration at step {0}")]
    Bookkeeping(i64),

    #[error("spike at step {t_spike} does not follow previous spike at {t_prev}")]
    SpikeOrder { t_prev: i64, t_spike: i64 },

    #[error("history too short: need {needed} steps, have {available}")]
    HistoryTooShort { needed: usize, available: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("connectivity: {0}")]
    Connectivity(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for EpropError {
    fn from(e: std::io::Error) -> Self {
        EpropError::Io(e.to_string())
    }
}

impl From<csv::Error> for EpropError {
    fn from(e: csv::Error) -> Self {
        EpropError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for EpropError {
    fn from(e: serde_json::Error) -> Self {
        EpropError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, EpropError>;

pub(crate) fn ensure_finite(x: f64, what: &'static str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(EpropError::NonFinite(what))
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> EpropError {
    EpropError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
