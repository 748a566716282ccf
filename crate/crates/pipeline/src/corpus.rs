//! Loading motion files and turning them into training windows.

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use stratavatar_core::dataset::{MotionFile, SplitManifest};
use stratavatar_core::kinematics::HEAD;
use stratavatar_core::{
    extract_observation, pad_front, recenter_horizontal, KinematicTree, MotionSequence, SparseObservation,
    TrackedJointSet,
};
use stratavatar_models::data::{observation_tensor, recenter_windows, rotation_tensor, stack_windows};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const MOTION_EXT: &str = "samf";

/// One motion with its ground-truth sparse observation.
#[derive(Debug, Clone)]
pub struct Clip {
    pub name: String,
    pub motion: MotionSequence<f64>,
    pub obs: SparseObservation<f64>,
}

impl Clip {
    pub fn new(name: impl Into<String>, motion: MotionSequence<f64>, tree: &KinematicTree<f64>, tracked: &TrackedJointSet) -> Result<Self> {
        let obs = extract_observation(&motion, tree, tracked)?;
        Ok(Self { name: name.into(), motion, obs })
    }

    pub fn len(&self) -> usize {
        self.motion.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motion.is_empty()
    }
}

pub fn motion_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.{MOTION_EXT}"))
}

/// Sorted names of the motion files in `dir`.
pub fn list_corpus(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(MOTION_EXT) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                names.push(stem.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

pub fn load_clip(dir: &Path, name: &str, tree: &KinematicTree<f64>, tracked: &TrackedJointSet) -> Result<Clip> {
    let path = motion_path(dir, name);
    if !path.exists() {
        return Err(Error::MissingDependency(format!("motion file {}", path.display())));
    }
    let file = MotionFile::read(&path)?;
    file.check_skeleton(tree)?;
    Clip::new(name, file.to_sequence()?, tree, tracked)
}

/// Train and test clips named by the configured manifest.
pub fn load_split(cfg: &RunConfig, tree: &KinematicTree<f64>) -> Result<(Vec<Clip>, Vec<Clip>)> {
    let manifest = read_manifest(cfg)?;
    let tracked = cfg.tracked();
    let load = |names: &[String]| -> Result<Vec<Clip>> {
        names.iter().map(|n| load_clip(&cfg.data.corpus, n, tree, &tracked)).collect()
    };
    Ok((load(&manifest.train)?, load(&manifest.test)?))
}

pub fn read_manifest(cfg: &RunConfig) -> Result<SplitManifest> {
    let path = &cfg.data.manifest;
    if !path.exists() {
        return Err(Error::MissingDependency(format!("split manifest {} (run `split` first)", path.display())));
    }
    Ok(SplitManifest::read(path)?)
}

/// Fixed-length training windows over a set of clips.
#[derive(Debug, Clone)]
pub struct WindowSet {
    /// `(count, T, 132)`
    pub rotations: Tensor,
    /// Horizontally recentred observations, `(count, T, F)`.
    pub obs: Tensor,
}

impl WindowSet {
    pub fn build(clips: &[Clip], window: usize, stride: usize, tracked: &TrackedJointSet, dev: &Device) -> Result<Self> {
        let usable: Vec<&Clip> = clips.iter().filter(|c| c.len() >= window).collect();
        if usable.is_empty() {
            return Err(Error::Config(format!("no clip has the {window} frames a window needs")));
        }
        let rots = usable.iter().map(|c| rotation_tensor(&c.motion, DType::F32, dev)).collect::<std::result::Result<Vec<_>, _>>()?;
        let obs = usable.iter().map(|c| observation_tensor(&c.obs, DType::F32, dev)).collect::<std::result::Result<Vec<_>, _>>()?;
        let rotations = stack_windows(&rots, window, stride)?;
        let obs = recenter_windows(&stack_windows(&obs, window, stride)?, tracked, HEAD)?;
        Ok(Self { rotations, obs })
    }

    pub fn len(&self) -> usize {
        self.rotations.dim(0).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The window ending at frame `t`, front-padded and recentred on the head.
pub fn online_window(obs: &SparseObservation<f64>, t: usize, window: usize) -> Result<SparseObservation<f64>> {
    let seen = obs.slice(0, t + 1);
    Ok(recenter_horizontal(&pad_front(&seen, window)?, HEAD)?)
}

/// Online windows for frames `start..end`, `(end - start, T, F)`.
pub fn online_windows(obs: &SparseObservation<f64>, start: usize, end: usize, window: usize, dev: &Device) -> Result<Tensor> {
    let mut flat = Vec::with_capacity((end - start) * window * obs.width());
    for t in start..end {
        flat.extend(online_window(obs, t, window)?.data().iter().map(|&v| v as f32));
    }
    Ok(Tensor::from_vec(flat, (end - start, window, obs.width()), dev)?)
}
