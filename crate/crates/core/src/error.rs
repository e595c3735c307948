//! Error type shared across the pipeline.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("unsupported channel count {0} (expected 1 or 3)")]
    UnsupportedChannels(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("unknown tap `{0}`")]
    UnknownTap(String),

    #[error("analytic CAM requires a gap_linear head")]
    OpaqueHead,

    #[error("unknown label `{value}` in {context}")]
    Vocabulary { value: String, context: String },

    #[error("malformed JSON in {path}: {message}")]
    MalformedJson { path: PathBuf, message: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code class: 1 input error, 2 model error, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Model(_) | Error::UnknownTap(_) | Error::OpaqueHead => 2,
            Error::ShapeMismatch(_) => 2,
            Error::Io { .. }
            | Error::InvalidImage(_)
            | Error::UnsupportedChannels(_)
            | Error::Vocabulary { .. }
            | Error::MalformedJson { .. }
            | Error::EmptyInput(_)
            | Error::InvalidArgument(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
