use std::path::PathBuf;

/// Errors raised anywhere in the engine.
///
/// Variants map onto the failure classes of the public operations; the CLI
/// uses [`Error::is_validation`] to pick its exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical error in {0}")]
    Numerical(String),
    #[error("no pixel passed the confidence threshold during initialization")]
    EmptyInit,
    #[error("mask has no confident pixel to lift")]
    EmptyLift,
    #[error("degenerate ray: zero-norm point")]
    DegenerateRay,
    #[error("insufficient matches: {found} survived, at least {required} required")]
    InsufficientMatches { found: usize, required: usize },
    #[error("degenerate geometry: normal equations stayed singular after damping")]
    DegenerateGeometry,
    #[error("memory bank is empty")]
    EmptyBank,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("run failed: {0}")]
    RunFailed(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Format(_) | Error::Validation(_) | Error::Config(_) | Error::Data(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
