use thiserror::Error;

/// Errors raised by the routing controller and its supporting modules.
#[derive(Debug, Error)]
pub enum Error {
    /// A distribution or model parameter is out of its valid domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Configuration failed validation. `field` names the offending key path.
    #[error("invalid configuration at `{field}`: {message}")]
    Config { field: String, message: String },

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// A persisted log or store could not be parsed at the given 1-based line.
    #[error("corrupt input at line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn contract(message: impl Into<String>) -> Self {
        Error::Contract(message.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
