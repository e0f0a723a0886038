//! Crate-wide error type.
//!
//! Errors are grouped by how a caller should react: bad inputs map to CLI
//! exit code 2, numeric trouble (including non-convergence and unbounded
//! descent directions) to 3, and IO to 4.

use thiserror::Error;

/// Everything that can go wrong across the crate.
#[derive(Debug, Error)]
pub enum StagewiseError {
    /// Caller-supplied data violates a precondition (dimension mismatch,
    /// invalid response vector, infeasible start, malformed spec, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// The linear minimization problem is unbounded below, e.g. a group with
    /// zero weight carries a nonzero gradient block, or a seminorm oracle was
    /// called without projecting out the null space.
    #[error("unbounded descent direction: {0}")]
    UnboundedDirection(String),

    /// An iterative routine failed to reach its tolerance; carries the last
    /// residual so callers can decide whether it is close enough.
    #[error("{what} did not converge (last residual {residual:.3e})")]
    Convergence { what: String, residual: f64 },

    /// Floating-point breakdown: non-finite loss, failed factorization of a
    /// matrix claimed positive definite, and similar.
    #[error("numeric failure{}: {what}", step_suffix(.step))]
    Numeric { what: String, step: Option<usize> },

    /// A query outside the recorded range (e.g. interpolation beyond the
    /// endpoints of a path).
    #[error("out of range: {0}")]
    Range(String),

    /// The operation is well defined but deliberately not implemented for
    /// this combination of inputs.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn step_suffix(step: &Option<usize>) -> String {
    match step {
        Some(k) => format!(" at step {k}"),
        None => String::new(),
    }
}

impl StagewiseError {
    /// Process exit code for the CLI: 2 invalid spec, 3 numeric, 4 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            StagewiseError::Input(_) | StagewiseError::Range(_) | StagewiseError::Unsupported(_) => 2,
            StagewiseError::UnboundedDirection(_)
            | StagewiseError::Convergence { .. }
            | StagewiseError::Numeric { .. } => 3,
            StagewiseError::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, StagewiseError>;
