//! Orchestration for the sparse-tracking motion generator: run configuration,
//! staged training with checkpoint hash chains, sliding-window inference,
//! evaluation reports, plots and ablation runs.

pub mod ablate;
pub mod chain;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod plot;
pub mod run;
pub mod stage;

pub use chain::{Chain, LatencyStats, OnlineOutput, Prediction};
pub use config::{Conditioning, PartitionMode, Profile, RunConfig, UpperSource, CHECKPOINT_ENV};
pub use corpus::Clip;
pub use error::{Error, Result};
pub use eval::{evaluate, EvalOutput};
pub use run::{Run, StageReport};
pub use stage::Stage;
