use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation angle {angle} rad is too close to pi for a unique logarithm")]
    AngleNearPi { angle: f64 },

    #[error("matrix is not positive semi-definite: {0}")]
    NotPsd(String),

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("only {got} correspondences, need {needed}")]
    TooFewCorrespondences { needed: usize, got: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("no neighbouring scans available to build a map for scan {0}")]
    NoMapScans(usize),

    #[error("only {converged} of {samples} registrations converged")]
    InsufficientConvergence { converged: usize, samples: usize },

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("timestamps must be strictly increasing (index {0})")]
    BadTimestamps(usize),

    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Broad category used by front ends to pick exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_) => ErrorKind::Usage,
            Error::AngleNearPi { .. }
            | Error::NotPsd(_)
            | Error::TooFewCorrespondences { .. }
            | Error::NumericalFailure(_)
            | Error::InsufficientConvergence { .. }
            | Error::TrainingDiverged { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

pub type Result<T> = std::result::Result<T, Error>;
