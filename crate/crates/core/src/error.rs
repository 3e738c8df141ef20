use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Adaptive quadrature ran out of subdivisions; `partial` is the best
    /// estimate reached and `error` its estimated absolute error.
    #[error("numeric failure: {message} (partial estimate {partial:e}, error {error:e})")]
    NumericFailure {
        message: String,
        partial: f64,
        error: f64,
    },

    #[error("root not bracketed on [{lo}, {hi}]: g(lo) = {g_lo:e}, g(hi) = {g_hi:e}")]
    BracketFailure {
        lo: f64,
        hi: f64,
        g_lo: f64,
        g_hi: f64,
    },

    #[error("degenerate association event {event}: probability {probability:e}")]
    DegenerateEvent { event: String, probability: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Attach context (which event / sweep point failed) to a numeric failure.
    pub fn with_context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::NumericFailure {
                message,
                partial,
                error,
            } => Error::NumericFailure {
                message: format!("{ctx}: {message}"),
                partial,
                error,
            },
            Error::BracketFailure { .. } | Error::DegenerateEvent { .. } => {
                Error::NumericFailure {
                    message: format!("{ctx}: {self}"),
                    partial: f64::NAN,
                    error: f64::NAN,
                }
            }
            other => other,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NumericFailure { .. } | Error::BracketFailure { .. } | Error::DegenerateEvent { .. }
        )
    }
}
