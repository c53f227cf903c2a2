use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (z = {0})")]
    PointBehindCamera(f64),
    #[error("non-positive depth {0}")]
    NonPositiveDepth(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("waypoint ({x:.3}, {y:.3}) lies outside the world")]
    OutOfWorld { x: f64, y: f64 },
    #[error("path segment {segment} crosses obstacle {obstacle}")]
    PathThroughObstacle { segment: usize, obstacle: usize },
    #[error("camera is below the ground plane (z = {0})")]
    CameraBelowGround(f64),
    #[error("timestamps are not strictly increasing at sample {0}")]
    NonMonotoneTime(usize),
    #[error("trajectory has zero total distance")]
    ZeroDistance,
    #[error("no traversable labels available: {0}")]
    NoLabels(&'static str),
    #[error("position ({x:.3}, {y:.3}) is outside the map")]
    OutOfBounds { x: f64, y: f64 },
    #[error("cell ({col}, {row}) is not traversable")]
    ForbiddenCell { col: usize, row: usize },
    #[error("cells {0} and {1} of the path are not adjacent")]
    NotAdjacent(usize, usize),
    #[error("goal is unreachable")]
    Unreachable,
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
