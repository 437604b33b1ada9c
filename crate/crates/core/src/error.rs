use std::path::PathBuf;

use thiserror::Error;

/// Every failure the engine can report.
///
/// Variants are grouped into three classes (see [`ErrorClass`]) which the
/// command-line front end maps onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("structural error: {0}")]
    Structure(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("unresolved bundle paths: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    Resolution(Vec<PathBuf>),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure classes used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Io,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } | Error::Resolution(_) => ErrorClass::Io,
            Error::Numeric(_) => ErrorClass::Numeric,
            Error::Dimension(_)
            | Error::Structure(_)
            | Error::Contract(_)
            | Error::Validation(_)
            | Error::Format { .. } => ErrorClass::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
