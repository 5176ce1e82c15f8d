use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A component was used with an incompatible mode, rule or layout.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    /// The constraint set of a mapping problem is empty.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Dummy-row mapping produced weights outside the box.
    #[error("dummy-row mapping leaves columns {columns:?} outside [{w_min}, {w_max}]")]
    DummyOutOfBounds {
        columns: Vec<usize>,
        w_min: f64,
        w_max: f64,
    },

    /// A weight column needs a conductance ratio the device cannot provide.
    #[error("column {column} needs conductance ratio {ratio:.6} below device ratio {g:.6}")]
    DynamicRange { column: usize, ratio: f64, g: f64 },

    #[error("malformed IDX file {path}: {reason}")]
    Idx { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
