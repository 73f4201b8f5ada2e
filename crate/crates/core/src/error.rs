use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown problem `{0}`")]
    NotFound(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical blow-up at particle {particle}, level {level}")]
    NumericalBlowup { particle: usize, level: usize },

    #[error("degenerate neighborhood around anchor {anchor}: {reason}")]
    DegenerateNeighborhood { anchor: usize, reason: String },

    #[error("singular Newton derivative |F'| = {derivative:e} at y = {y}")]
    SingularJacobian { y: f64, derivative: f64 },

    #[error("Newton did not converge after {iterations} iterations (|F| = {residual:e})")]
    NewtonNonConvergence { iterations: usize, residual: f64 },

    #[error("level {level}, particle {particle}: {source}")]
    Particle {
        level: usize,
        particle: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn at_particle(self, level: usize, particle: usize) -> Self {
        Error::Particle {
            level,
            particle,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors a user fixes by editing inputs rather than numerics.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::DimensionMismatch { .. }
                | Error::NotFound(_)
                | Error::Config(_)
        )
    }
}
