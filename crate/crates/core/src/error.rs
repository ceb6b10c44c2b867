use thiserror::Error;

/// Errors produced by the estimation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NvmixError {
    /// An argument lies outside the domain of the requested function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Vector and matrix shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The Sobol' direction-number table does not cover the requested dimension.
    #[error("unsupported Sobol' dimension {requested} (table supports up to {max})")]
    UnsupportedDimension { requested: usize, max: usize },

    /// The integrand produced NaN at the given point.
    #[error("integrand returned NaN at point {point:?}")]
    NanIntegrand { point: Vec<f64> },

    /// A quantile callback returned a negative or non-numeric value.
    #[error("invalid mixture: quantile({u}) returned {value}")]
    InvalidMixture { u: f64, value: f64 },

    /// Scale matrix is not positive definite (or not positive semidefinite).
    #[error("scale matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// Rank-deficient scale matrix used where full rank is required.
    #[error("scale matrix is singular (rank {rank} < {dim})")]
    Singular { rank: usize, dim: usize },

    /// Operation is not available for this mixture family.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// An iterative method stopped without reaching its tolerance.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// Malformed input data.
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, NvmixError>;
