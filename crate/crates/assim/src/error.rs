use thiserror::Error;

/// Errors raised by the estimators and their numerical primitives.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `q` vanishes where `p` carries mass (KL, chi-square).
    #[error("support violation: {0}")]
    SupportViolation(String),

    /// Every particle weight underflowed to zero.
    #[error("weight collapse at {context}: all weights vanish (max log-weight {max_log_weight})")]
    WeightCollapse { context: String, max_log_weight: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("iteration did not converge: {0}")]
    NonConvergent(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unknown benchmark `{name}` (valid: {valid})")]
    UnknownBenchmark { name: String, valid: String },
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            got,
        }
    }

    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotSpd(_)
                | Error::WeightCollapse { .. }
                | Error::NonFinite(_)
                | Error::NonConvergent(_)
                | Error::Degenerate(_)
                | Error::SupportViolation(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
