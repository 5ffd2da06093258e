//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong when building models, caches, propagators,
/// or gradients.
#[derive(Debug, Error)]
pub enum Error {
    #[error("node vector is empty")]
    EmptyNodes,

    #[error("node vector has {0} entries, at most {max} are supported", max = crate::weighting::MAX_NODES)]
    TooManyNodes(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("drive channel {channel} has a non-Hermitian dipole (max asymmetry {max_asymmetry:.3e})")]
    NonHermitianDipole { channel: usize, max_asymmetry: f64 },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("truncation order {order} is not supported (allowed 1..={max})")]
    UnsupportedOrder { order: usize, max: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("cache fingerprint does not match the supplied system model")]
    FingerprintMismatch,

    #[error("corrupt cache file: {0}")]
    CorruptCache(String),

    #[error("cache format version {found} is not readable (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("cache holds no slope entries but the pulse requests linear interpolation")]
    SlopeEntriesMissing,

    #[error("line search found no ascent direction at iteration {iteration}")]
    NoAscentDirection { iteration: usize },

    #[error("charge cutoff too small: {0}")]
    CutoffTooSmall(String),

    #[error("iteration failed to converge: {0}")]
    NoConvergence(String),

    #[error("dressed-state labelling is ambiguous: {0}")]
    HybridizationAmbiguity(String),

    #[error("integrator exceeded the step limit of {limit}")]
    StepLimitExceeded { limit: usize },

    #[error("requested tolerance could not be met: {0}")]
    ToleranceNotMet(String),

    #[error("quadrature did not converge: {0}")]
    QuadratureNotConverged(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
