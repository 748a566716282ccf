use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error(transparent)]
    Core(#[from] stratavatar_core::Error),
    #[error("training diverged at step {step}: loss {loss}")]
    DivergedTraining { step: usize, loss: f64 },
    #[error("missing dependency: {0}")]
    MissingDependency(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("window length {frames} not divisible by downsampling rate {rate}")]
    BadLength { frames: usize, rate: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
