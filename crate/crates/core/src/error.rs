use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = RcfError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum RcfError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("no interactions")]
    NoInteractions,

    #[error("data error: {0}")]
    Data(String),

    #[error("relation too dense: no positive triplet admits a negative tail")]
    RelationTooDense,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("shape mismatch for tensor `{tensor}`: expected {expected:?}, found {found:?}")]
    Shape {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl RcfError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RcfError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            RcfError::Config(_) => 1,
            RcfError::Numerical(_) => 3,
            _ => 2,
        }
    }
}
