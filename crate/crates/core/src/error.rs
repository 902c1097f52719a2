use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("level {level} outside ladder range [{min}, {max}]")]
    LevelOutOfRange { level: i64, min: i64, max: i64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("time {time} is not a multiple of the grid step {step}")]
    OffGrid { time: f64, step: f64 },

    #[error("step count {n_steps} does not divide the Brownian base grid of {base_steps} steps")]
    GridMismatch { n_steps: usize, base_steps: usize },

    #[error("level {level} drawn active at step {step} with zero probability")]
    ZeroProbability { level: i64, step: usize },

    #[error("tolerance too loose: k_max = {k_max} < k_min = {k_min}, no levels are needed")]
    ToleranceTooLoose { k_min: i64, k_max: i64 },

    #[error("training diverged at step {step}: loss {loss} exceeds {limit}")]
    Diverged { step: usize, loss: f64, limit: f64 },

    #[error("nonpositive value {value} at point {index} cannot be log-transformed")]
    NonPositive { index: usize, value: f64 },

    #[error("not enough points: need {need}, got {got}")]
    TooFewPoints { need: usize, got: usize },
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
