use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by scenario loading and the solver pipeline.
#[derive(Debug, Error)]
pub enum MecError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("scenario parse error: {0}")]
    Parse(String),

    #[error("invalid scenario field `{field}`: {reason}")]
    Invalid { field: String, reason: String },

    #[error(
        "terminal position unreachable: |qF - q0| = {distance:.6} m exceeds N*slot_len*v_max = {reach:.6} m"
    )]
    Unreachable { distance: f64, reach: f64 },

    #[error("period {period} s is not a positive multiple of the slot length {slot_len} s")]
    NonMultiplePeriod { period: f64, slot_len: f64 },

    #[error("task requirement infeasible for TD {k} in slot {n}: {reason}")]
    Infeasible { k: usize, n: usize, reason: String },

    #[error("solver failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, MecError>;
