use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the description-space pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid joint table: {0}")]
    InvalidTable(String),

    #[error("invalid system specification: {0}")]
    InvalidSystem(String),

    #[error("malformed sudoku board {board:?}: {reason}")]
    MalformedBoard { board: String, reason: String },

    #[error("empty board catalog")]
    EmptyCatalog,

    #[error("no n-gram entries survived filtering")]
    NoNgrams,

    #[error("system too large for exact enumeration: {0}")]
    TooLarge(String),

    #[error("invalid subset: {0}")]
    InvalidSubset(String),

    #[error("operation requires at least {required} components, got {got}")]
    TooFewComponents { required: usize, got: usize },

    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),

    #[error("outcome {outcome} out of range for alphabet of size {size}")]
    OutcomeOutOfRange { outcome: usize, size: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("stale tape: parameters changed since the forward pass")]
    StaleTape,

    #[error("invalid objective: {0}")]
    InvalidObjective(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("hardening did not converge after {steps} steps (component {component}, outcomes {a} and {b}, coefficient {coefficient:.6})")]
    HardeningStalled {
        steps: usize,
        component: usize,
        a: usize,
        b: usize,
        coefficient: f64,
    },

    #[error("band unreachable: {0}")]
    BandUnreachable(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
