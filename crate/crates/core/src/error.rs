use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MatchError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("empty reference")]
    EmptyReference,

    #[error("feature set has {keypoints} keypoints but {descriptors} descriptors")]
    LengthMismatch { keypoints: usize, descriptors: usize },

    #[error("keypoint {0} has a non-finite coordinate")]
    NonFiniteKeypoint(usize),

    #[error("degenerate sample")]
    DegenerateSample,

    #[error("point at infinity")]
    PointAtInfinity,

    #[error("insufficient matches: need at least 4, got {0}")]
    InsufficientMatches(usize),

    #[error("cannot score match {0}: second-nearest distance is zero or missing")]
    Unscorable(usize),

    #[error("no detections")]
    NoDetections,

    #[error("no matches")]
    NoMatches,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("support records are not aligned with the match set")]
    MisalignedSupports,

    #[error("monotonicity violated: {0}")]
    Monotonicity(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
}

impl MatchError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MatchError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        MatchError::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
