use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value encountered {context}")]
    NonFinite { context: String },

    #[error("state norm {norm:.3e} exceeded blow-up bound {bound:.3e} at t = {t}")]
    BlowUp { t: f64, norm: f64, bound: f64 },

    #[error("adaptive step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },

    #[error("degenerate frame: column {column} is linearly dependent on the preceding columns")]
    DegenerateFrame { column: usize },

    #[error("frame is not orthonormal (max |QᵀQ - I| = {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },

    #[error("orthonormality drift {deviation:.3e} at t = {t} exceeds 1e-6; use a smaller re-orthonormalization interval")]
    OrthonormalityDrift { t: f64, deviation: f64 },

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("requested time {requested} outside tape coverage [{start}, {end}]")]
    Coverage { requested: f64, start: f64, end: f64 },

    #[error("invalid index selection: {0}")]
    InvalidIndices(String),

    #[error("estimate not converged: checkpoints differ by {difference:.3e} (limit {limit:.3e})")]
    NotConverged { difference: f64, limit: f64 },

    #[error("moving-frame coordinate left validity ball: |z| = {norm:.3e} > {radius} at t = {t}")]
    ValidityBall { t: f64, norm: f64, radius: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
