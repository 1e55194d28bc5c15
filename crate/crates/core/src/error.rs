use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model graph: {0}")]
    Graph(String),

    #[error("weight file format: {0}")]
    Format(String),

    #[error("parameter `{name}` has shape {found:?}, model expects {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("data: {0}")]
    Data(String),

    #[error("cannot decode image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("{path}:{line}: {reason}")]
    Csv {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this failure: 2 for data problems, 3 for
    /// numerical ones, 1 for everything that is a usage mistake.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 3,
            Error::Data(_)
            | Error::Image { .. }
            | Error::Csv { .. }
            | Error::Io { .. }
            | Error::Format(_)
            | Error::ParamShape { .. }
            | Error::Json(_) => 2,
            Error::Shape { .. } | Error::Config(_) | Error::Graph(_) => 1,
        }
    }
}
