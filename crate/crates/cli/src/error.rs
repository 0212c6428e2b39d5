use std::path::{Path, PathBuf};

use densecorr_core::Error as CoreError;
use densecorr_flownet::NetError;
use thiserror::Error;

/// Failure of a subcommand; [`CliError::exit_code`] maps it to the process status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical fault: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Net(#[from] NetError),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

fn core_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Config(_) => EXIT_CONFIG,
        CoreError::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) | CliError::Io { .. } => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Core(e) => core_code(e),
            CliError::Net(e) => match e {
                NetError::Config(_) | NetError::Spec(_) => EXIT_CONFIG,
                NetError::NonFinite { .. } | NetError::Diverged { .. } | NetError::InvalidProbability { .. } => EXIT_NUMERICAL,
                NetError::Core(c) => core_code(c),
                _ => EXIT_DATA,
            },
        }
    }
}

/// Attaches the path to an I/O error.
pub fn io_at<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
