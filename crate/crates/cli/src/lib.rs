//! Front end for `ncs-core`: JSON experiment configs in, JSON and CSV
//! reports out. The binary is a thin wrapper around [`commands`].

use std::path::{Path, PathBuf};

use ncs_core::NcsError;

pub mod commands;
pub mod config;
pub mod report;

pub use config::{ExperimentConfig, Mode};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing gains: {0}")]
    MissingGains(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] NcsError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// 0 success, 1 bad input, 2 mathematical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_mathematical() => 2,
            CliError::MissingGains(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Worker count from `NCS_ASYM_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("NCS_ASYM_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("NCS_ASYM_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}
