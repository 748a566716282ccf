//! Scalar-generic core of the sparse-tracking motion generator: kinematics,
//! sparse observations, metrics, motion datasets, codebook quantization and
//! the diffusion schedule/sampler.
//!
//! Numeric code is generic over [`Real`]; the `*32` / `*64` aliases name the
//! concrete instantiations.

// `!(x > 0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dataset;
pub mod error;
pub mod kinematics;
pub mod latent;
pub mod linalg;
pub mod metrics;
pub mod observations;
pub mod placement;
pub mod scalar;
pub mod schedule;

pub use error::{Error, Result};
pub use kinematics::{
    forward_kinematics, merge_pose, split_pose, to_6d, to_matrix, BodyPartition, KinematicTree, MotionSequence, Part,
    Pose, Rotation6D,
};
pub use latent::{LatentPart, LatentWindow, MotionCodebook};
pub use linalg::{Mat3, Vec3};
pub use metrics::EvalReport;
pub use observations::{extract_observation, pad_front, recenter_horizontal, SparseObservation, TrackedJointSet};
pub use placement::recover_root_translation;
pub use scalar::Real;
pub use schedule::{sample, Denoiser, NoiseSchedule};

// Concrete instantiations: `*32` for the model stack, `*64` for oracles and data generation.
pub type Rotation6D32 = Rotation6D<f32>;
pub type Pose32 = Pose<f32>;
pub type MotionSequence32 = MotionSequence<f32>;
pub type KinematicTree32 = KinematicTree<f32>;
pub type SparseObservation32 = SparseObservation<f32>;
pub type LatentWindow32 = LatentWindow<f32>;
pub type MotionCodebook32 = MotionCodebook<f32>;
pub type NoiseSchedule32 = NoiseSchedule<f32>;
pub type Rotation6D64 = Rotation6D<f64>;
pub type Pose64 = Pose<f64>;
pub type MotionSequence64 = MotionSequence<f64>;
pub type KinematicTree64 = KinematicTree<f64>;
pub type SparseObservation64 = SparseObservation<f64>;
pub type LatentWindow64 = LatentWindow<f64>;
pub type MotionCodebook64 = MotionCodebook<f64>;
pub type NoiseSchedule64 = NoiseSchedule<f64>;
