use std::path::PathBuf;

use thiserror::Error;

use crate::grdf::GrdfError;
use crate::raster::RadiometricState;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Validation,
    External,
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Io => 3,
            ErrorClass::Validation => 4,
            ErrorClass::External => 5,
            ErrorClass::Numeric => 6,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Doppler bandwidth {doppler_hz} Hz exceeds the PRF window {prf_hz} Hz")]
    Aliasing { doppler_hz: f64, prf_hz: f64 },

    #[error("{what} at ({az}, {rg}) lies outside the {height}x{width} raster")]
    OutOfBounds {
        what: &'static str,
        az: usize,
        rg: usize,
        height: usize,
        width: usize,
    },

    #[error("grid mismatch: expected {expected:?}, got {actual:?}")]
    GridMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("raster too small: {0}")]
    TooSmall(String),

    #[error("non-finite sample at ({az}, {rg})")]
    NonFinite { az: usize, rg: usize },

    #[error("wrong radiometric state: expected {expected:?}, got {actual:?}")]
    WrongState {
        expected: RadiometricState,
        actual: RadiometricState,
    },

    #[error("no usable samples: {0}")]
    Empty(String),

    #[error("missing clip bounds for polarization {0}")]
    MissingBounds(String),

    #[error("degenerate clip bounds: low == high == {0}")]
    DegenerateBounds(f64),

    #[error("scene {0:?} is not in the split manifest")]
    UnknownScene(String),

    #[error("arity mismatch: enhancer expects {expected} input(s), got {actual}")]
    Arity { expected: usize, actual: usize },

    #[error("external command `{command}` exited with code {code:?}")]
    ExternalExit { command: String, code: Option<i32> },

    #[error("external command `{command}` timed out after {seconds} s")]
    ExternalTimeout { command: String, seconds: u64 },

    #[error("external protocol violation in {path}: {reason}")]
    Protocol { path: PathBuf, reason: String },

    #[error("refinement aborted after {completed} completed stage(s): {source}")]
    RefineAborted {
        completed: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("pipeline stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Grdf(#[from] GrdfError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } | Error::Json { .. } => ErrorClass::Io,
            Error::Grdf(e) => match e {
                GrdfError::Io { .. } => ErrorClass::Io,
                _ => ErrorClass::Validation,
            },
            Error::ExternalExit { .. } | Error::ExternalTimeout { .. } | Error::Protocol { .. } => {
                ErrorClass::External
            }
            Error::NonFinite { .. } | Error::Empty(_) | Error::DegenerateBounds(_) => {
                ErrorClass::Numeric
            }
            Error::RefineAborted { source, .. } | Error::Stage { source, .. } => source.class(),
            _ => ErrorClass::Validation,
        }
    }
}
