use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A price vector was required to lie strictly inside the simplex.
    #[error("price vector is not interior: {0}")]
    NonInterior(String),

    /// A price vector failed the coherence check (nonnegative, sums to one).
    #[error("price vector is not coherent: {0}")]
    NotCoherent(String),

    /// Dimension mismatch between vectors that must share K or N.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An iterative solver hit its iteration cap before reaching tolerance.
    #[error("solver exceeded {max_iters} iterations (residual {residual:.3e}, tol {tol:.3e})")]
    MaxIterations {
        max_iters: usize,
        residual: f64,
        tol: f64,
    },

    /// The 1-D root finder could not bracket a sign change.
    #[error("no sign change found within |delta| <= {bound:.3e}")]
    BracketFailure { bound: f64 },

    /// A matrix with no positive eigenvalue where one was required.
    #[error("matrix has no positive eigenvalue")]
    ZeroMatrix,

    /// The cost-comparison ratio is 0/0 at the uniform price vector.
    #[error("eta is undefined at the uniform price vector")]
    DegenerateUniform,

    /// A suboptimality gap was zero or negative where a positive one is required.
    #[error("non-positive gap at t={t}: {gap:.3e}")]
    NonPositiveGap { t: usize, gap: f64 },

    /// Structured inputs violated a documented precondition.
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    /// Configuration file is missing a field or holds an invalid value.
    #[error("invalid config: field `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid_config(field: &str, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
