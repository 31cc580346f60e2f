//! Error type shared across the crate.

use thiserror::Error;

/// Energy trace entry: (iteration, pyramid level, energy value).
pub type TraceEntry = (usize, usize, f64);

#[derive(Debug, Error)]
pub enum Error {
    /// An index addressed a row, frame, or latent instant outside its valid range.
    #[error("{what} index {index} out of range 0..{len}")]
    OutOfBounds {
        what: &'static str,
        index: usize,
        len: usize,
    },

    /// A scalar parameter or configuration field violated its documented constraint.
    #[error("invalid {what}: {details}")]
    InvalidParameter { what: &'static str, details: String },

    /// Two buffers that must share dimensions did not.
    #[error("shape mismatch in {what}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    /// The optimizer produced a non-finite energy; the trace up to the failure is attached.
    #[error("solver diverged at iteration {} (level {})", .trace.last().map_or(0, |e| e.0), .trace.last().map_or(0, |e| e.1))]
    SolverDiverged { trace: Vec<TraceEntry> },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },

    #[error("config parse error on {path}: {source}")]
    Config {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    /// A file had valid syntax but inadmissible contents (bad magic, missing frames, ...).
    #[error("malformed input {path}: {details}")]
    Malformed { path: String, details: String },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn image(path: impl AsRef<std::path::Path>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn config(path: impl AsRef<std::path::Path>, source: serde_json::Error) -> Self {
        Error::Config {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn malformed(path: impl AsRef<std::path::Path>, details: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.as_ref().display().to_string(),
            details: details.into(),
        }
    }

    pub fn invalid(what: &'static str, details: impl Into<String>) -> Self {
        Error::InvalidParameter {
            what,
            details: details.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SolverDiverged { .. } => 4,
            Error::Io { .. } | Error::Image { .. } | Error::Malformed { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
