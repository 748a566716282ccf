//! Conversion of external (AMASS-style) motion into [`MotionFile`]s.
//!
//! Two source layouts are understood:
//!
//! * `.npz` archives with `poses` (frames × 3·J axis-angle, J ≥ 22), `trans`
//!   (frames × 3) and `mocap_framerate` (or `mocap_frame_rate`);
//! * `.json` documents `{"fps", "rotation_format": "axis_angle" | "matrix",
//!   "rotations": [[...]], "translations": [[x, y, z]]}` where each rotation
//!   row holds 3 (axis-angle) or 9 (row-major matrix) values per joint.
//!
//! Joints beyond the first 22 (hands, face) are dropped.

use std::fs::File;
use std::path::Path;

use ndarray::{Array0, Array2};
use ndarray_npy::NpzReader;
use serde::Deserialize;

use super::motion_file::MotionFile;
use crate::error::{Error, Result};
use crate::kinematics::{KinematicTree, MotionSequence, Pose, Rotation6D, NUM_JOINTS};
use crate::linalg::{Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestFormat {
    AmassNpz,
    Json,
}

impl IngestFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("npz") => Ok(Self::AmassNpz),
            Some("json") => Ok(Self::Json),
            other => Err(Error::UnsupportedFormat(format!("extension {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationFormat {
    AxisAngle,
    Matrix,
}

/// Source motion with full rotation matrices, before conversion.
#[derive(Debug, Clone)]
pub struct ExternalMotion {
    pub fps: f64,
    /// `[frame][joint]`, at least 22 joints per frame.
    pub rotations: Vec<Vec<Mat3<f64>>>,
    pub translations: Vec<Vec3<f64>>,
}

#[derive(Deserialize)]
struct JsonSource {
    fps: f64,
    rotation_format: RotationFormat,
    rotations: Vec<Vec<f64>>,
    translations: Vec<[f64; 3]>,
}

pub fn decode_rotations(row: &[f64], format: RotationFormat) -> Result<Vec<Mat3<f64>>> {
    let width = match format {
        RotationFormat::AxisAngle => 3,
        RotationFormat::Matrix => 9,
    };
    if !row.len().is_multiple_of(width) {
        return Err(Error::InvalidFile(format!("rotation row of {} values is not a multiple of {width}", row.len())));
    }
    Ok(row
        .chunks_exact(width)
        .map(|c| match format {
            RotationFormat::AxisAngle => Mat3::from_rotation_vector(&Vec3::new(c[0], c[1], c[2])),
            RotationFormat::Matrix => Mat3([[c[0], c[1], c[2]], [c[3], c[4], c[5]], [c[6], c[7], c[8]]]),
        })
        .collect())
}

impl ExternalMotion {
    pub fn from_rows(fps: f64, format: RotationFormat, rows: &[Vec<f64>], translations: Vec<Vec3<f64>>) -> Result<Self> {
        if rows.len() != translations.len() {
            return Err(Error::LengthMismatch(format!("{} rotation rows, {} translations", rows.len(), translations.len())));
        }
        if rows.is_empty() {
            return Err(Error::InvalidFile("source has no frames".into()));
        }
        let rotations = rows.iter().map(|r| decode_rotations(r, format)).collect::<Result<Vec<_>>>()?;
        Ok(Self { fps, rotations, translations })
    }

    pub fn to_motion_file(&self, tree: &KinematicTree<f64>) -> Result<MotionFile> {
        let got = self.rotations.iter().map(Vec::len).min().unwrap_or(0);
        if got < NUM_JOINTS {
            return Err(Error::MissingJoints { needed: NUM_JOINTS, got });
        }
        let frames = self
            .rotations
            .iter()
            .zip(&self.translations)
            .map(|(rots, &t)| {
                let r6 = rots[..NUM_JOINTS].iter().map(Rotation6D::from_matrix).collect::<Result<Vec<_>>>()?;
                Ok(Pose::new(r6, t))
            })
            .collect::<Result<Vec<_>>>()?;
        MotionFile::from_sequence(&MotionSequence::new(frames, self.fps)?, tree)
    }
}

fn read_json(path: &Path) -> Result<ExternalMotion> {
    let src: JsonSource = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let trans = src.translations.iter().map(|t| Vec3(*t)).collect();
    ExternalMotion::from_rows(src.fps, src.rotation_format, &src.rotations, trans)
}

fn npz_matrix(npz: &mut NpzReader<File>, name: &str) -> Result<Array2<f64>> {
    let bad = |e: &dyn std::fmt::Display| Error::InvalidFile(format!("{name}: {e}"));
    let names = npz.names().map_err(|e| bad(&e))?;
    let key = names
        .iter()
        .find(|n| n.as_str() == name || n.as_str() == format!("{name}.npy"))
        .cloned()
        .ok_or_else(|| Error::UnsupportedFormat(format!("npz archive has no `{name}` array")))?;
    match npz.by_name::<ndarray::OwnedRepr<f64>, ndarray::Ix2>(&key) {
        Ok(a) => Ok(a),
        Err(_) => {
            let a: Array2<f32> = npz.by_name(&key).map_err(|e| bad(&e))?;
            Ok(a.mapv(|v| v as f64))
        }
    }
}

fn npz_scalar(npz: &mut NpzReader<File>, names: &[&str]) -> Result<f64> {
    let available = npz.names().map_err(|e| Error::InvalidFile(e.to_string()))?;
    for name in names {
        if let Some(key) = available.iter().find(|n| n.as_str() == *name || n.as_str() == format!("{name}.npy")).cloned() {
            if let Ok(a) = npz.by_name::<ndarray::OwnedRepr<f64>, ndarray::Ix0>(&key) {
                return Ok(a.into_scalar());
            }
            let a: Array0<f32> = npz.by_name(&key).map_err(|e| Error::InvalidFile(e.to_string()))?;
            return Ok(a.into_scalar() as f64);
        }
    }
    Err(Error::UnsupportedFormat(format!("npz archive has none of {names:?}")))
}

fn read_npz(path: &Path) -> Result<ExternalMotion> {
    let mut npz = NpzReader::new(File::open(path)?).map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
    let poses = npz_matrix(&mut npz, "poses")?;
    let trans = npz_matrix(&mut npz, "trans")?;
    let fps = npz_scalar(&mut npz, &["mocap_framerate", "mocap_frame_rate"])?;
    if trans.ncols() != 3 {
        return Err(Error::InvalidFile(format!("trans has {} columns", trans.ncols())));
    }
    let rows: Vec<Vec<f64>> = poses.rows().into_iter().map(|r| r.to_vec()).collect();
    let translations = trans.rows().into_iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect();
    ExternalMotion::from_rows(fps, RotationFormat::AxisAngle, &rows, translations)
}

/// Reads an external motion and converts it to the 22-joint motion format.
pub fn ingest_external(path: &Path, format: Option<IngestFormat>, tree: &KinematicTree<f64>) -> Result<MotionFile> {
    let format = match format {
        Some(f) => f,
        None => IngestFormat::from_path(path)?,
    };
    let motion = match format {
        IngestFormat::AmassNpz => read_npz(path)?,
        IngestFormat::Json => read_json(path)?,
    };
    motion.to_motion_file(tree)
}
