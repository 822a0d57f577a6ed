use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed arguments that violate an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    /// A persisted artifact is malformed. `field` names the offending header field.
    #[error("format error in `{field}`: {message}")]
    Format { field: String, message: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e}, tolerance {tolerance:.3e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("trimap has no constrained pixels; the matting system is singular")]
    InfeasibleTrimap,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage `{stage}` failed on {input}: {source}")]
    Stage {
        stage: String,
        input: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &str, input: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            input: input.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 1 usage, 2 format/io, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Format { .. } | Error::Io { .. } => 2,
            Error::Numeric(_) | Error::Convergence { .. } | Error::InfeasibleTrimap => 3,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
