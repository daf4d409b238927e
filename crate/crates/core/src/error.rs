use thiserror::Error;

/// Errors raised by the simulator and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("node {node} out of range for {n}-node topology")]
    NodeOutOfRange { node: usize, n: usize },

    /// A trade or bid was attempted outside its preconditions. Indicates an engine bug.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A conserved quantity or post-condition drifted beyond tolerance.
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for the CLI: 1 for config/IO problems, 2 for invariant violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Protocol(_) | Error::Invariant(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
