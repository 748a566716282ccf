//! Neural components of the sparse-tracking motion generator: part VQ-VAEs,
//! latent denoisers, the full-body decoder and the recurrent refiner, plus
//! their training loops and checkpoint container.

#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod data;
pub mod diffusion;
pub mod error;
mod fk_op;
pub mod fullbody;
pub mod geometry;
pub mod init;
pub mod layers;
pub mod train;
pub mod vqvae;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use diffusion::{DenoiserConfig, DenoiserModel, Objective};
pub use error::{Error, Result};
pub use fullbody::{DecoderConfig, FullBodyDecoder, Refiner, RefinerConfig, RefinerWeights};
pub use train::{TrainConfig, TrainLog};
pub use vqvae::{VqVae, VqVaeConfig};
