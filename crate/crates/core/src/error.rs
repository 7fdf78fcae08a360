use std::io;

use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Vector lengths do not agree.
    #[error("shape mismatch: expected length {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    /// A dimension mismatch on a streamed observation, reported with its position.
    #[error("stream position {position}: expected {expected} features, got {got}")]
    StreamShape {
        position: u64,
        expected: usize,
        got: usize,
    },

    /// Invalid configuration of a model, generator or initializer.
    #[error("validation error: {0}")]
    Validation(String),

    /// An internal invariant was violated.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// A batch EM component lost all of its responsibility mass.
    #[error("degenerate fit: component {component} has total responsibility {mass:e}")]
    DegenerateFit { component: usize, mass: f64 },

    /// Stream configuration problem detected before any row is read.
    #[error("configuration error: {0}")]
    Config(String),

    /// A checkpoint could not be parsed.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// A checkpoint was written by an incompatible format version.
    #[error("incompatible checkpoint version {found} (supported: {supported})")]
    IncompatibleVersion { found: u32, supported: u32 },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}
