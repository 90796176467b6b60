//! Error type shared by the whole crate.

use thiserror::Error;

/// Errors reported by constructors, samplers, and estimators.
///
/// Numerical *outcomes* (a fit that does not yield a proper Gaussian, a
/// Newton run that stops before reaching tolerance) are not errors: they are
/// reported through [`crate::MomentsOutcome`] and fit diagnostics. `Error` is
/// reserved for calls that cannot produce a meaningful result at all.
#[derive(Debug, Error)]
pub enum Error {
    /// A point, vector, or parameter block has the wrong length.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A configuration or argument value is outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A matrix that must be symmetric positive definite is not.
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    /// The feature matrix of the batch does not span the parameter space,
    /// so the variational objective has no unique minimizer.
    #[error("feature matrix has rank {rank} but {needed} is required for a unique minimizer")]
    RankDeficient { rank: usize, needed: usize },

    /// The annealed sampler could not draw an initial point with finite
    /// target log-density.
    #[error("no initial point with finite target log-density after {attempts} draws")]
    InitialDrawRejected { attempts: usize },
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
