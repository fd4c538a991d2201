use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate quaternion: squared norm {0:e} is at or below the admissible floor")]
    DegenerateQuaternion(f64),

    #[error("zero quaternion cannot be rescaled")]
    ZeroQuaternion,

    #[error("simplex weights violated: sum = {sum}, min = {min}")]
    SimplexViolation { sum: f64, min: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("record {iteration} is incomplete: goal was not reached")]
    IncompleteRecord { iteration: usize },

    #[error("record {iteration}: cost-to-go telescoping fails at index {index} (error {error:e})")]
    CostMismatch { iteration: usize, index: usize, error: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empty safety set")]
    EmptySet,

    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("degenerate corridor segment: consecutive waypoints coincide")]
    DegenerateSegment,

    #[error("invalid track: {0}")]
    InvalidTrack(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bootstrap failed: {0}")]
    Bootstrap(String),

    #[error("iteration {iteration} failed: {reason}")]
    IterationFailed { iteration: usize, reason: String },

    #[error("missing record for iteration {0}")]
    MissingRecord(usize),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
