use std::fmt;

/// Errors raised anywhere in the beamforming pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed file contents (bad magic, unknown version or kind).
    #[error("format error: {0}")]
    Format(String),
    /// Dimensions that overflow or disagree with the payload length.
    #[error("size error: {0}")]
    Size(String),
    /// An argument or configuration value violates its contract.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// Two operands have incompatible shapes.
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    /// A numerical failure: singular system, non-finite value, divergence.
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// An error raised inside a pipeline stage.
    #[error("stage `{stage}` failed (config {config_hash}): {source}")]
    Stage {
        stage: String,
        config_hash: String,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse error class, used by the command line front end to choose an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numerical,
    Io,
}

impl Error {
    pub fn invalid(msg: impl fmt::Display) -> Self {
        Error::Invalid(msg.to_string())
    }

    pub fn dims(msg: impl fmt::Display) -> Self {
        Error::DimMismatch(msg.to_string())
    }

    pub fn numerical(msg: impl fmt::Display) -> Self {
        Error::Numerical(msg.to_string())
    }

    pub fn in_stage(self, stage: &str, config_hash: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            config_hash: config_hash.to_string(),
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Invalid(_) | Error::DimMismatch(_) => ErrorClass::Config,
            Error::Numerical(_) => ErrorClass::Numerical,
            Error::Format(_) | Error::Size(_) | Error::Io(_) => ErrorClass::Io,
            Error::Stage { source, .. } => source.class(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
