use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error(transparent)]
    Core(#[from] nyssl::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 1 for invalid input, 2 for an aborted or numerically failed run, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        use nyssl::Error as E;
        match self {
            CliError::Config(_) | CliError::Toml { .. } => 1,
            CliError::Io { .. } => 3,
            CliError::Core(e) => match e {
                E::TrainingAborted { .. } | E::NonFinite(_) | E::CgNotConverged { .. } | E::Factorization(_) => 2,
                E::Io(_) | E::Csv(_) => 3,
                _ => 1,
            },
        }
    }
}
