//! Motion data: on-disk format, synthetic generation, external ingestion,
//! train/test splitting and fixed-length windowing.

pub mod ingest;
pub mod motion_file;
pub mod split;
pub mod synthetic;
pub mod window;

pub use ingest::{ingest_external, IngestFormat};
pub use motion_file::MotionFile;
pub use split::{split, SplitManifest};
pub use synthetic::{generate_synthetic, MotionStyle, StyleMix, SyntheticConfig};
pub use window::window;
