use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("invalid wave packet: {0}")]
    InvalidWavePacket(String),

    #[error("invalid field state: {0}")]
    InvalidFieldState(String),

    #[error("combination references level ({m},{n}) beyond hierarchy n_max {n_max}")]
    LevelOutOfRange { m: usize, n: usize, n_max: usize },

    #[error("integrator step underflow at t = {t}: dt {dt} < dt_min {dt_min}")]
    StepUnderflow { t: f64, dt: f64, dt_min: f64 },

    #[error("non-finite state encountered at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("invalid integrator config: {0}")]
    InvalidConfig(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
