//! Crate-wide error type, with variants grouped by the CLI exit code they
//! map to (2 config, 3 dependency, 4 numerical).

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid {what}: {reason}")]
    Invalid { what: String, reason: String },

    #[error("config hash mismatch against existing run dir {dir} (pass --force to override)")]
    ConfigHashMismatch { dir: PathBuf },

    #[error("missing dependency stage `{stage}`: {hint}")]
    MissingStage { stage: String, hint: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unknown token {token:?} while {context}")]
    UnknownToken { token: String, context: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 dependency, 4 numerical,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Invalid { .. }
            | Error::ConfigHashMismatch { .. }
            | Error::UnknownToken { .. } => 2,
            Error::MissingStage { .. } => 3,
            Error::Numerical(_) => 4,
            Error::Io { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
