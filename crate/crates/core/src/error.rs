use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("standard deviation must be positive, got {which} = {value}")]
    NonPositiveSigma { which: &'static str, value: f64 },

    #[error("correlation must lie strictly inside (-1, 1), got {0}")]
    CorrelationOutOfRange(f64),

    #[error("number of copies must be at least 1, got {0}")]
    InvalidCopyCount(u64),

    #[error("parameter {which} is not finite")]
    NonFiniteParameter { which: &'static str },

    #[error("Bessel K requires a positive argument, got {0}")]
    NonPositiveArgument(f64),

    #[error("K_{nu}({x}) overflows f64")]
    Overflow { nu: f64, x: f64 },

    #[error("density is singular at x = 0")]
    SingularPoint,

    #[error("series did not converge after {terms} outer blocks")]
    NotConverged { terms: usize },

    #[error("parameters do not match the required case: {0}")]
    CaseMismatch(String),

    #[error("variance is zero; skewness and kurtosis are undefined")]
    DegenerateVariance,

    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },

    #[error("cannot interpret {0:?} as an exact rational")]
    ParameterNotRational(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
