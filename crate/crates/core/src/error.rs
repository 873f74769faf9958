use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration. `key` names the offending setting and `line`
    /// is the 1-based line in the source text when it came from a file.
    #[error("configuration error{}: {key}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config {
        key: String,
        line: Option<usize>,
        message: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("missing interference reading for sensor {sensor_id}")]
    MissingReading { sensor_id: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            line: None,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
