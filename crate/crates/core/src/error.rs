use std::path::PathBuf;

use thiserror::Error;

use crate::gateway::ProviderError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing point cloud file {0}")]
    MissingCloud(PathBuf),

    #[error("corrupt point cloud {path}: {reason}")]
    CorruptCloud { path: PathBuf, reason: String },

    #[error("missing pose file for frame {0}")]
    MissingPose(u32),

    #[error("missing depth image for frame {0}")]
    MissingDepth(u32),

    #[error("missing intrinsics file {0}")]
    MissingIntrinsics(PathBuf),

    #[error("no frames found under {0}")]
    NoFrames(PathBuf),

    #[error("frame {frame}: {reason}")]
    BadFrame { frame: u32, reason: String },

    #[error("frame {frame}: image is {actual:?}, intrinsics expect {expected:?}")]
    DimensionMismatch {
        frame: u32,
        expected: (u32, u32),
        actual: (u32, u32),
    },

    #[error("pose rotation is not orthonormal (deviation {deviation:.3e})")]
    NonOrthonormalPose { frame: Option<u32>, deviation: f64 },

    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("too few points: need {needed}, have {have}")]
    TooFewPoints { needed: usize, have: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsatisfiable synthetic scene spec: {0}")]
    Unsatisfiable(String),

    #[error(transparent)]
    Provider(#[from] ProviderError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by malformed user input (CLI exit code 2).
    pub fn is_bad_input(&self) -> bool {
        !matches!(self, Error::Provider(_))
    }
}
