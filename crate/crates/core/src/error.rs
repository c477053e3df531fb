use std::io;

/// Errors produced by the propagation engine.
///
/// The variants map onto the exit-code contract of the command-line tool:
/// `Format`, `Data` and `Param` are validation failures (exit 2), the rest
/// are internal or numerical failures (exit 1).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed binary or text input (bad magic, version, truncation).
    #[error("format error: {0}")]
    Format(String),
    /// Well-formed input whose contents violate an invariant.
    #[error("data error: {0}")]
    Data(String),
    /// Invalid configuration or arguments.
    #[error("parameter error: {0}")]
    Param(String),
    /// Non-finite values encountered inside the linear solver.
    #[error("solver error: {0}")]
    Solver(String),
    /// Classifier training diverged.
    #[error("training diverged at epoch {epoch}: {message}")]
    Train { epoch: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the caller's inputs rather than the engine.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Format(_) | Error::Data(_) | Error::Param(_) | Error::Json(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
