use thiserror::Error;

/// Errors raised by the algebraic and experimental routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("index ({i}, {j}) out of range for dimension {dim}")]
    IndexOutOfRange { i: usize, j: usize, dim: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("product dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("operator is not Hermitian (deviation {0:e})")]
    NotHermitian(f64),

    #[error("operator is not a projection: {0}")]
    NotProjection(String),

    #[error("invalid exponent p = {0}")]
    InvalidExponent(f64),

    #[error("exponents do not satisfy 1/p = 1/r + 1/q (p={p}, r={r}, q={q})")]
    ExponentMismatch { p: f64, r: f64, q: f64 },

    #[error("inequality violated in {what}: lhs {lhs} > rhs {rhs}")]
    InequalityViolated { what: String, lhs: f64, rhs: f64 },

    #[error("filtration level {level} out of range 1..={ambient}")]
    LevelOutOfRange { level: usize, ambient: usize },

    #[error("malformed algebra descriptor: {0}")]
    MalformedAlgebra(String),

    #[error("operator is not in the truncated algebra (off-block mass {0:e})")]
    NotInAlgebra(f64),

    #[error("contraction violated: ||U_{n}|| = {norm}")]
    ContractionViolation { n: usize, norm: f64 },

    #[error("projection corank {corank} exceeds budget t = {t}")]
    CorankViolation { corank: f64, t: f64 },

    #[error("dimension {dim} too large for exhaustive enumeration (max {max})")]
    EnumerationTooLarge { dim: usize, max: usize },

    #[error("alphas must start at 0, increase strictly and stay in [0, 1]")]
    InvalidAlphas,

    #[error("factor of size {0} is not present in the truncation")]
    MissingFactor(usize),

    #[error("sign coordinate {0} is not retained in the truncation")]
    MissingSign(usize),

    #[error("parameter out of range: {0}")]
    OutOfRange(String),
}

pub type Result<T> = std::result::Result<T, Error>;
