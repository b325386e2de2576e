use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty cloud")]
    EmptyCloud,

    #[error("degenerate crop")]
    DegenerateCrop,

    #[error("cloud too small: level {level} has {points} points")]
    CloudTooSmall { level: usize, points: usize },

    #[error("empty neighborhood for query {0}")]
    EmptyNeighborhood(usize),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: String, expected: usize, got: usize },

    #[error("degenerate configuration")]
    DegenerateConfiguration,

    #[error("underdetermined rotation")]
    UnderdeterminedRotation,

    #[error("no valid hypothesis")]
    NoValidHypothesis,

    #[error("no correspondences")]
    NoCorrespondences,

    #[error("active set changed under finite-difference probe (coordinate {0})")]
    ActiveSetFlip(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("weight container: {0}")]
    Weights(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dims(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected,
            got,
        }
    }

    /// True for errors caused by the geometry of the input rather than its syntax.
    pub fn is_degenerate_geometry(&self) -> bool {
        matches!(
            self,
            Error::EmptyCloud
                | Error::DegenerateCrop
                | Error::CloudTooSmall { .. }
                | Error::EmptyNeighborhood(_)
                | Error::DegenerateConfiguration
                | Error::UnderdeterminedRotation
                | Error::NoValidHypothesis
                | Error::NoCorrespondences
        )
    }
}
