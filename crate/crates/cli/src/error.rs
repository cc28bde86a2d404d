use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    #[error("diagnostics failed: {0}")]
    Diagnostics(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },

    #[error(transparent)]
    Core(#[from] fpa_core::Error),
}

impl CliError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Validation { field: field.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        use fpa_core::Error as E;
        match self {
            Self::Validation { .. } => 2,
            Self::Diagnostics(_) => 3,
            Self::Io { .. } => 4,
            Self::Csv { source, .. } if source.is_io_error() => 4,
            Self::Csv { .. } => 2,
            Self::Core(e) => match e {
                E::Io(_) => 4,
                E::Csv(c) if c.is_io_error() => 4,
                E::Csv(_)
                | E::Invalid { .. }
                | E::Config(_)
                | E::Row { .. }
                | E::MissingColumn(_)
                | E::Empty
                | E::SampleSize { .. } => 2,
                _ => 3,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
