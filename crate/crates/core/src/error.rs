use thiserror::Error;

/// Errors raised by the analysis pipeline.
///
/// The variants follow the failure classes a caller needs to tell apart:
/// a malformed file, bad samples, an out-of-range window, a bad argument,
/// or a numerically degenerate input.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error in `{field}`: {msg}")]
    Format { field: String, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("invalid parameter `{name}`: {msg}")]
    Parameter { name: &'static str, msg: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("reference error: {0}")]
    Reference(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn param(name: &'static str, msg: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
