use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid service class {class}: {reason}")]
    InvalidClass { class: usize, reason: String },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("session {session} of class {class} is incomplete ({served} of {required} jobs)")]
    SessionIncomplete {
        session: u64,
        class: usize,
        served: u32,
        required: u32,
    },

    #[error("allocation {target:?} does not sum to {servers} servers")]
    AllocationMismatch { target: Vec<usize>, servers: usize },

    #[error("invariant violated at t={time}: {what}")]
    InvariantViolated { time: f64, what: String },

    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
