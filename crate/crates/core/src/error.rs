use thiserror::Error;

/// Errors raised by the numeric layer (types, decoders, certificates,
/// solvers, BoK, sampling).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("vector is empty")]
    Empty,
    #[error("entry {index} is not finite")]
    NonFiniteEntry { index: usize },
    #[error("entry {index} is negative")]
    NegativeEntry { index: usize },
    #[error("entries sum to {actual}, outside tolerance of 1")]
    SumOutOfTolerance { actual: f64 },
    #[error("all entries are zero")]
    AllZero,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("lambda must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("k = {k} out of range 1..={vocab_size}")]
    KOutOfRange { k: usize, vocab_size: usize },
    #[error("p = {0} out of range (0, 1]")]
    POutOfRange(f64),
    #[error("support mask is empty")]
    EmptyMask,
    #[error("log-gradient requested at zero probability (index {index})")]
    ZeroProbabilityUnderLogGradient { index: usize },
    #[error("no coordinate exceeds the support threshold")]
    EmptySupport,
    #[error("gradient oracle returned a non-finite value at iteration {iter}")]
    NonFiniteGradient { iter: usize },
    #[error("every surviving coordinate underflowed in the multiplicative update")]
    AllMassVanished,
    #[error("multiplicative update overflowed")]
    NonFiniteUpdate,
    #[error("value {0} out of range")]
    OutOfRange(f64),
    #[error("invalid weight scheme parameter: {0}")]
    InvalidSchemeParam(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// Stable machine-readable code, for callers that cross a language
    /// boundary and cannot match on the enum.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Empty => "EMPTY",
            Error::NonFiniteEntry { .. } => "NON_FINITE_ENTRY",
            Error::NegativeEntry { .. } => "NEGATIVE_ENTRY",
            Error::SumOutOfTolerance { .. } => "SUM_OUT_OF_TOLERANCE",
            Error::AllZero => "ALL_ZERO",
            Error::DimensionMismatch { .. } => "DIMENSION_MISMATCH",
            Error::NonPositiveLambda(_) => "NON_POSITIVE_LAMBDA",
            Error::KOutOfRange { .. } => "K_OUT_OF_RANGE",
            Error::POutOfRange(_) => "P_OUT_OF_RANGE",
            Error::EmptyMask => "EMPTY_MASK",
            Error::ZeroProbabilityUnderLogGradient { .. } => "ZERO_PROBABILITY_LOG_GRADIENT",
            Error::EmptySupport => "EMPTY_SUPPORT",
            Error::NonFiniteGradient { .. } => "NON_FINITE_GRADIENT",
            Error::AllMassVanished => "ALL_MASS_VANISHED",
            Error::NonFiniteUpdate => "NON_FINITE_UPDATE",
            Error::OutOfRange(_) => "OUT_OF_RANGE",
            Error::InvalidSchemeParam(_) => "INVALID_SCHEME_PARAM",
            Error::InvalidConfig(_) => "INVALID_CONFIG",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
