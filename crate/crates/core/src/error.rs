use thiserror::Error;

/// Failure modes of a noise predictor, local or remote.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DenoiserError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("{what} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("response id {found} does not match request id {expected}")]
    IdMismatch { expected: u64, found: u64 },
    #[error("no response within {millis} ms")]
    Timeout { millis: u64 },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("remote error: {0}")]
    Remote(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("{what} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("denoiser failed at step {step}: {source}")]
    Denoiser {
        step: usize,
        #[source]
        source: DenoiserError,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn denoiser(step: usize) -> impl FnOnce(DenoiserError) -> Error {
        move |source| Error::Denoiser { step, source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
