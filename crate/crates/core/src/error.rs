use thiserror::Error;

use crate::causal::CausalError;
use crate::data::DataError;
use crate::numerics::NumericsError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Causal(#[from] CausalError),

    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True when the error signals a numerical blow-up rather than bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::Divergence(_) | Error::Numerics(NumericsError::NonFinite { .. })
        )
    }
}
