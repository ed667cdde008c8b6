use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("dwell-time violation: mode {current} held for {elapsed} step(s) of {dwell_time}, cannot switch to {requested}")]
    DwellViolation {
        current: usize,
        requested: usize,
        elapsed: usize,
        dwell_time: usize,
    },

    #[error("invalid certificate: {0}")]
    Certificate(String),

    #[error("unsupported gain: {0}")]
    UnsupportedGain(String),

    #[error("composition error: {0}")]
    Composition(String),

    #[error("small-gain condition violated: cycle {cycle:?} has gain product {product}")]
    SmallGainInfeasible { cycle: Vec<usize>, product: f64 },

    #[error("abstraction too large: estimated {estimated_bytes} bytes exceeds cap of {cap_bytes} bytes")]
    MemoryCap {
        estimated_bytes: u64,
        cap_bytes: u64,
    },

    #[error("corrupt artifact {path:?}: {reason}")]
    Integrity { path: PathBuf, reason: String },

    #[error("artifact {path:?} has format version {found}, expected {expected}")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::DwellViolation { .. } => "dwell_violation",
            Error::Certificate(_) => "certificate",
            Error::UnsupportedGain(_) => "unsupported_gain",
            Error::Composition(_) => "composition",
            Error::SmallGainInfeasible { .. } => "small_gain_infeasible",
            Error::MemoryCap { .. } => "memory_cap",
            Error::Integrity { .. } => "integrity",
            Error::Version { .. } => "version",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
