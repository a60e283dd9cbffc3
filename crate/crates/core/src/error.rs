use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("joint {joint} value {value} outside limits [{lo}, {hi}]")]
    LimitViolation {
        joint: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("degenerate geometry: {0}")]
    Geometry(String),
    #[error("link {0} is not movable")]
    Immovable(usize),
    #[error("grasp point is {radius:.4} m from the rotation axis (minimum {min})")]
    NearAxis { radius: f64, min: f64 },
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("no finite candidate scores")]
    Score,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid object spec: {0}")]
    ObjectSpec(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("goal task is undefined: goal equals initial state")]
    UndefinedTask,
    #[error("degenerate trace: {0}")]
    DegenerateTrace(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("environment: {0}")]
    Environment(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
