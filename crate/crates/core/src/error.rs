use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid batch: {len} transitions, at least {required} required")]
    InvalidBatch { len: usize, required: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("policy parameter is outside the stability region: {0}")]
    Unstable(String),

    #[error("numerical overflow in {0}; use the log-domain evaluator")]
    Overflow(String),

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            found,
        }
    }
}
