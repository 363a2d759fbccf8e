use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented range.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("frame {frame_id}: point {index} has a non-finite coordinate")]
    NonFinitePoint { frame_id: u64, index: usize },

    #[error("cluster covariance needs at least 2 members, got {0}")]
    SingletonCluster(usize),

    #[error("step {step}: non-finite value after {stage}")]
    NumericalFailure { step: u64, stage: &'static str },

    /// Innovation covariance is singular or too badly conditioned to invert.
    #[error("degenerate innovation covariance (condition number {condition:e})")]
    DegenerateInnovation { condition: f64 },

    #[error("invalid track transition: cannot {event} a track in state {state}")]
    StateMachine {
        state: &'static str,
        event: &'static str,
    },

    #[error("estimate and truth sequences are misaligned; missing frames: {missing:?}")]
    Alignment { missing: Vec<u64> },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
