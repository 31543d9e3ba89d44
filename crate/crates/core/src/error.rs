//! Shared error type for the whole pipeline.
//!
//! Every fallible operation in this crate returns [`Result`]. The variants
//! split into two broad families: *usage* errors (bad inputs, malformed files,
//! incompatible shapes) and *numerical* errors (singular systems, solvers that
//! fail to converge). The command line keeps the two families on separate exit
//! codes, so the distinction is part of the public contract.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A file did not match the expected on-disk layout (bad magic, truncated
    /// payload, malformed header JSON, ...).
    #[error("format error: {0}")]
    Format(String),

    /// Inputs violated a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// Two arguments that must agree on dimensions, spacing or label count
    /// did not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An index (slice, plane, node) was outside the grid.
    #[error("out of bounds: {0}")]
    Bounds(String),

    /// A network or solver specification is internally inconsistent.
    #[error("spec error: {0}")]
    Spec(String),

    /// An electrode could not be placed on the given head model.
    #[error("electrode placement error: {0}")]
    Placement(String),

    /// The assembled linear system has no unique solution (for instance the
    /// source and sink are not connected through conductive tissue).
    #[error("singular system: {0}")]
    Singular(String),

    /// The iterative solver exhausted its iteration budget. The residual
    /// history is kept so callers can log the convergence trace.
    #[error(
        "solver did not converge: relative residual {residual:.3e} after {iterations} iterations"
    )]
    Convergence {
        residual: f64,
        iterations: usize,
        history: Vec<f64>,
    },

    /// A metric has no defined value for the given inputs (for instance a
    /// Hausdorff distance when one surface is empty).
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by numerical failure rather than bad usage.
    /// The CLI maps these to a dedicated exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Singular(_) | Error::Convergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
