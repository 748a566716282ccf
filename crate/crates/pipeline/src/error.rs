use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing dependency: {0}")]
    MissingDependency(String),
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error(transparent)]
    Models(stratavatar_models::Error),
    #[error(transparent)]
    Core(#[from] stratavatar_core::Error),
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("plot: {0}")]
    Plot(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<stratavatar_models::Error> for Error {
    fn from(e: stratavatar_models::Error) -> Self {
        match e {
            stratavatar_models::Error::DivergedTraining { step, loss } => Self::Diverged { step, loss },
            stratavatar_models::Error::MissingDependency(m) => Self::MissingDependency(m),
            other => Self::Models(other),
        }
    }
}

impl Error {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::MissingDependency(_) => 3,
            Self::Diverged { .. } => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
