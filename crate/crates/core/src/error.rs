use thiserror::Error;

/// Errors raised by the numerical kernel and the physics modules built on it.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not Hermitian (max |m - m^H| = {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("entry buffer has length {len}, expected {expected}")]
    BadLength { len: usize, expected: usize },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("state is not normalized (norm^2 = {0})")]
    NotNormalized(f64),

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error("bad Pauli embedding indices (nu={nu}, alpha={alpha}, d={dim})")]
    BadIndices { nu: usize, alpha: usize, dim: usize },

    #[error("bad channel weights: {0}")]
    BadWeights(String),

    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),

    #[error("Kraus operators violate sum E^H E <= 1 (largest eigenvalue {0})")]
    NotSubNormalized(f64),

    #[error("channel output has vanishing trace ({0:e})")]
    ZeroTrace(f64),

    #[error("no mutually unbiased basis construction for d = {0} (supported: primes and 4)")]
    UnsupportedDimension(usize),

    #[error("incomplete measurement records: {0}")]
    IncompleteRecords(String),

    #[error("expected {expected} channel outputs, got {got}")]
    MissingOutputs { expected: usize, got: usize },

    #[error("preparation expansion is ill-conditioned (residual {0:e})")]
    IllConditioned(f64),

    #[error("transfer matrix has effective rank {rank} < {full}; strict recovery refused")]
    SingularBeyondRecovery { rank: usize, full: usize },

    #[error("value {value} out of range: {what}")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
