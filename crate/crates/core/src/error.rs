use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    Shape {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    #[error("{what} index {index} out of range (len {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("ingestion failed: {0}")]
    Ingestion(String),

    #[error("label `{label}` is declared by both `{first}` and `{second}`")]
    Collision {
        label: String,
        first: String,
        second: String,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("non-finite {component} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        component: &'static str,
    },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: impl ToString, rhs: impl ToString) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_string(),
            rhs: rhs.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl ToString, line: usize, message: impl ToString) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            message: message.to_string(),
        }
    }

    /// Short tag used by the command line front end to categorize failures.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } | Error::Index { .. } | Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Ingestion(_) | Error::Collision { .. } => "ingestion",
            Error::Parse { .. } | Error::Schema(_) => "schema",
            Error::EmptyCorpus => "empty-corpus",
            Error::NonFiniteLoss { .. } => "training",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code for this error category.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "io" => 3,
            "schema" | "ingestion" => 4,
            "empty-corpus" => 5,
            "training" => 6,
            "checkpoint" => 7,
            _ => 8,
        }
    }
}
