//! Seeded random train/test split.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TRAIN_RATIO: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratio: f64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Shuffles the sorted corpus listing with `seed`; both sides are non-empty.
pub fn split(corpus: &[String], ratio: f64, seed: u64) -> Result<SplitManifest> {
    if corpus.len() < 2 {
        return Err(Error::InvalidArgument("need at least two items to split".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("ratio {ratio} outside (0, 1)")));
    }
    let mut items = corpus.to_vec();
    items.sort();
    items.dedup();
    if items.len() != corpus.len() {
        return Err(Error::InvalidArgument("corpus listing has duplicates".into()));
    }
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = items.len();
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let test = items.split_off(n_train);
    Ok(SplitManifest { seed, ratio, train: items, test })
}
