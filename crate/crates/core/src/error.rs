use thiserror::Error;

use crate::lie::Mat3;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vehicle index {index} out of range for {n} vehicles")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("edge ({from}, {to}) is a self-loop")]
    SelfLoop { from: usize, to: usize },

    #[error("expected {expected} relative measurements, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("matrix is not a rotation: {reason}\n{matrix}")]
    NotRotation { reason: String, matrix: Mat3 },

    #[error("eigenvalue computation did not converge for a {dim}x{dim} matrix")]
    EigenNonConvergence { dim: usize },

    #[error("closed-loop matrix is not Hurwitz (max real part of spectrum {max_real:e})")]
    NotHurwitz { max_real: f64 },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("Lyapunov equation residual {residual:e} exceeds tolerance {tolerance:e}")]
    LyapunovResidual { residual: f64, tolerance: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite state for vehicle {vehicle} at step {step} (t = {time} s)")]
    NonFinite { step: u64, time: f64, vehicle: usize },

    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("malformed trajectory data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
