use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite value produced by operator `{op}`")]
    NonFinite { op: &'static str },
    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),
    #[error("parameter error: {0}")]
    Param(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn config(detail: impl Into<String>) -> Self {
        Error::Config(detail.into())
    }
}
