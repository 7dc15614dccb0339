use std::path::Path;

use thiserror::Error;

/// Command failures, grouped by the exit code they map to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<dccf::Error> for CliError {
    fn from(e: dccf::Error) -> Self {
        if e.is_divergence() {
            return CliError::Divergence(e.to_string());
        }
        match e {
            dccf::Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<dccf::data::DataError> for CliError {
    fn from(e: dccf::data::DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<dccf::numerics::NumericsError> for CliError {
    fn from(e: dccf::numerics::NumericsError) -> Self {
        CliError::from(dccf::Error::from(e))
    }
}

pub type CliResult<T> = Result<T, CliError>;
