use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A shape or length precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("loss kind {0} is not supported for this curvature estimate")]
    UnsupportedLoss(&'static str),

    /// A damped Kronecker factor was not positive-definite.
    #[error("Cholesky factorization failed for layer {layer} ({factor} factor): input not positive-definite")]
    CholeskyFailure { layer: usize, factor: &'static str },

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint decode failed: {0}")]
    Checkpoint(String),

    #[error("worker for member {member} panicked during interval {interval}: {message}")]
    WorkerPanic {
        member: usize,
        interval: usize,
        message: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
