use thiserror::Error;

#[derive(Debug, Error)]
pub enum EqcError {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Fitting could not proceed (e.g. a class has no observations).
    #[error("fit error: {0}")]
    Fit(String),

    #[error("tuning error: {0}")]
    Tuning(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("experiment error: {0}")]
    Experiment(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, EqcError>;

impl EqcError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        EqcError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: impl AsRef<std::path::Path>, line: usize, msg: impl Into<String>) -> Self {
        EqcError::Parse {
            path: path.as_ref().display().to_string(),
            line,
            msg: msg.into(),
        }
    }
}

macro_rules! domain {
    ($($arg:tt)*) => { $crate::error::EqcError::Domain(format!($($arg)*)) };
}
pub(crate) use domain;
