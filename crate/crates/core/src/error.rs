use std::path::PathBuf;

use crate::genotype::{DecodeError, Violation};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid genotype: {}", join(.0))]
    InvalidGenotype(Vec<Violation>),

    #[error(transparent)]
    Decode(#[from] DecodeError),

    #[error("stage {stage}: {message}")]
    Shape { stage: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("malformed document: {0}")]
    Format(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", .path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{0}")]
    Runtime(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code: 1 validation, 2 I/O, 3 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidGenotype(_)
            | Error::Decode(_)
            | Error::InvalidArgument(_)
            | Error::Config(_)
            | Error::Format(_)
            | Error::Dataset(_) => 1,
            Error::Io { .. } | Error::Image { .. } => 2,
            Error::Shape { .. } | Error::Runtime(_) => 3,
        }
    }
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|v| v.message.as_str()).collect::<Vec<_>>().join("; ")
}
