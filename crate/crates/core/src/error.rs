use thiserror::Error;

/// Errors raised by the estimation and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("clone window is full ({0} clones); marginalize first")]
    WindowFull(usize),

    #[error("clone index {index} out of range ({len} clones)")]
    InvalidCloneIndex { index: usize, len: usize },

    #[error("clone timestamp {0} is not newer than the latest clone")]
    NonMonotonicClone(f64),

    #[error("no clone at timestamp {0}")]
    UnknownClone(f64),

    #[error("degenerate geometry: tag and anchor coincide")]
    DegenerateGeometry,

    #[error("landmark behind camera (depth {0})")]
    NonPositiveDepth(f64),

    #[error("unknown landmark {0}")]
    UnknownLandmark(u32),

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("invalid time step {0}")]
    InvalidTimeStep(f64),

    #[error("no valid observations after gating")]
    NoValidObservations,

    #[error("innovation covariance is not positive ({0})")]
    NonPositiveInnovation(f64),

    #[error("init window has {got} entries, need at least {min}")]
    WindowTooShort { got: usize, min: usize },

    #[error("init window timestamps are not increasing at entry {0}")]
    WindowOrder(usize),

    #[error("init window covariance {0} is not symmetric PSD")]
    WindowCovariance(usize),

    #[error("insufficient measurements: {got} rows for a 5-dim anchor state")]
    InsufficientMeasurements { got: usize },

    #[error("rank-deficient anchor Jacobian")]
    RankDeficient,

    #[error("anchor {0} is not initialized")]
    UnknownAnchor(u32),

    #[error("anchor {0} is already initialized")]
    DuplicateAnchor(u32),

    #[error("anchor {0} has no first estimate registered")]
    UnseededAnchor(u32),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
