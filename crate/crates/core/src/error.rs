use thiserror::Error;

/// Errors raised by estimation, variance computation and simulation.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("saturated controls: effective rank {rank} of the control block is not below n = {n}; no inference is possible")]
    SaturatedControls { rank: usize, n: usize },

    #[error("regressors of interest collinear with controls (smallest eigenvalue of the partialled-out Gram matrix is {lambda_min:e})")]
    CollinearRegressors { lambda_min: f64 },

    #[error("correction system singular or ill-conditioned: {detail}. The system is not invertible when the controls include indicators for the clusters; absorb cluster fixed effects by demeaning instead")]
    SingularSystem { detail: String },

    #[error(
        "indefinite variance estimate: coordinate {coordinate} has non-positive variance {value:e}"
    )]
    IndefiniteVariance { coordinate: usize, value: f64 },

    #[error("pair restriction excludes the variance pair ({position}, {position}) in cluster {cluster}; variances cannot be restricted to zero")]
    DiagonalRestricted { cluster: usize, position: usize },

    #[error("pair restriction is not symmetric in cluster {cluster}: ({p}, {q}) admitted but ({q}, {p}) is not")]
    AsymmetricRestriction { cluster: usize, p: usize, q: usize },

    #[error(
        "unsupported power-basis size {0}; expected one of 1, 7, 13, 28, 34, 84, 90, 210, 216"
    )]
    UnsupportedBasis(usize),

    #[error("invalid design: {0}")]
    InvalidDesign(String),
}

impl Error {
    /// True for failures of the numerical procedure itself, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SaturatedControls { .. }
                | Error::CollinearRegressors { .. }
                | Error::SingularSystem { .. }
                | Error::IndefiniteVariance { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
