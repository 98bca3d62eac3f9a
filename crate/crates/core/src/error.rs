use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid bath: {0}")]
    InvalidBath(String),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("exact enumeration of an inhomogeneous bath with N = {n} exceeds the limit of {limit} spins")]
    ExactTooLarge { n: usize, limit: usize },

    #[error("degenerate bath law: {0}")]
    Degenerate(String),

    #[error("quadrature did not converge: estimated error {error:e} exceeds tolerance {tolerance:e}")]
    Quadrature { error: f64, tolerance: f64 },

    #[error("evolution failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("unsupported noise model: {0}")]
    UnsupportedNoise(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("{0}")]
    Io(String),
}

impl Error {
    pub(crate) fn arg(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
