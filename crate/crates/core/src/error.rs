use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// The CLI maps these onto process exit codes with [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: field `{field}`: {msg}")]
    Parse {
        path: String,
        line: usize,
        field: String,
        msg: String,
    },

    #[error("scan `{scan_id}`: {msg}")]
    Invariant { scan_id: String, msg: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("graph: {0}")]
    Graph(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invariant(scan_id: &str, msg: impl Into<String>) -> Self {
        Error::Invariant {
            scan_id: scan_id.to_string(),
            msg: msg.into(),
        }
    }

    /// Exit code used by the command line tool: 2 for data and validation
    /// problems, 3 for numerical failures, 1 for anything the user asked for
    /// incorrectly.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Invariant { .. } | Error::Io { .. } => 2,
            Error::Numerical(_) => 3,
            Error::Config(_) | Error::InvalidArgument(_) => 1,
            Error::Shape(_) | Error::Graph(_) => 3,
        }
    }
}
