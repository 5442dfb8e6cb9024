use thiserror::Error;

/// Errors produced by the calibration toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Roll/pitch extraction hit the |pitch| = pi/2 singularity.
    #[error("degenerate orientation: cos(pitch) = {cos_pitch:e} at posture {posture}")]
    DegenerateOrientation { posture: usize, cos_pitch: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    /// Pool generation stopped at its attempt cap before reaching the requested size.
    /// The postures found so far travel with the error.
    #[error("partial pool: {} of {requested} postures after {} attempts", .pool.len(), .pool.stats.attempts)]
    PartialPool {
        requested: usize,
        pool: Box<crate::posegen::PosturePool>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
