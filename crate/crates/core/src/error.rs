use std::path::PathBuf;

use crate::mapper::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("design-rule check failed with {} violation(s)", .0.len())]
    Drc(Vec<Violation>),

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{0}")]
    Runtime(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }

    /// Process exit code used by the command-line front end.
    ///
    /// `2` for anything the user can fix by changing inputs (validation, DRC,
    /// schema), `3` for failures while a stage was running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape { .. }
            | Error::InvalidParam(_)
            | Error::NonFinite(_)
            | Error::Parse { .. }
            | Error::SchemaVersion { .. }
            | Error::Drc(_)
            | Error::Format { .. } => 2,
            Error::Divergence { .. } | Error::Io { .. } | Error::Runtime(_) => 3,
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape {
            context,
            expected,
            actual,
        })
    }
}
