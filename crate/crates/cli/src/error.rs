use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hsavsr_core::Error),

    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Failed(String),
}

pub type CliResult<T = ()> = Result<T, CliError>;
