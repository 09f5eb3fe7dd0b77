use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] pcss_adv::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for numeric failures inside a run, 1 for everything the user can
    /// fix by changing inputs.
    pub fn exit_code(&self) -> u8 {
        use pcss_adv::Error as E;
        match self {
            CliError::Core(E::NonFinite(_) | E::Grad(_) | E::Shape(_)) => 2,
            _ => 1,
        }
    }
}
