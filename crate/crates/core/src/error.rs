use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("missing certificate: {0}")]
    CertificateMissing(&'static str),

    #[error("objective is unbounded below: {0}")]
    UnboundedObjective(String),

    #[error("state became non-finite at t = {time}")]
    Divergence { time: f64 },

    #[error("Hessian solve failed at state {state:?}")]
    SingularHessian { state: Vec<f64> },

    #[error("invalid projection: {0}")]
    InvalidProjection(String),

    #[error("infeasible linear system: {0}")]
    Infeasible(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("protocol is not componentwise: {0}")]
    DistributednessViolation(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
