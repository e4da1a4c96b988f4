use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage}: {source}")]
    Numerical {
        stage: &'static str,
        #[source]
        source: viscotomo::Error,
    },
    #[error("{0}")]
    Unconverged(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical { source, .. } if source.is_not_converged() => 4,
            CliError::Numerical { .. } => 3,
            CliError::Unconverged(_) => 4,
            CliError::Io { .. } | CliError::Pool(_) => 1,
        }
    }
}
