use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cueless sample: at least one cue token is required")]
    Cueless,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {reason} (byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("backbone: {0}")]
    Backbone(String),
    #[error("training: {0}")]
    Training(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Check(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short machine-readable category, used by the command-line tool.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Tensor(_) => "tensor",
            Error::Config(_) => "config",
            Error::Cueless => "cueless",
            Error::Corpus(_) => "corpus",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Backbone(_) => "backbone",
            Error::Training(_) => "training",
            Error::Json(_) => "json",
            Error::Check(_) => "check",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
