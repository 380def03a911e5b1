use std::path::PathBuf;

use thiserror::Error;

/// Process exit code for a run that finished with some items skipped.
pub const EXIT_PARTIAL: u8 = 3;
/// Process exit code for bad input, configuration or a failed command.
pub const EXIT_INPUT: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("cannot parse config file {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },

    #[error("class map {path}: {source}")]
    ClassMap {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] deda_core::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> CliError {
    CliError::Io { path: path.into(), source }
}
