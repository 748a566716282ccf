//! Sparse tracking signal built from head/hand (optionally pelvis) transforms.
//!
//! Per tracked joint and frame the layout is 18 values:
//! `[global rot 6D (6), global position m (3), angular velocity 6D (6), positional velocity m/frame (3)]`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, KinematicTree, MotionSequence, Rotation6D, HEAD, L_WRIST, NUM_JOINTS, PELVIS, R_WRIST};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;

pub const FEATURES_PER_JOINT: usize = 18;
pub const ROT_OFFSET: usize = 0;
pub const POS_OFFSET: usize = 6;
pub const ANG_VEL_OFFSET: usize = 9;
pub const LIN_VEL_OFFSET: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackedJointSet {
    joints: Vec<usize>,
}

impl TrackedJointSet {
    pub fn new(joints: Vec<usize>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::InvalidArgument("tracked joint set is empty".into()));
        }
        for (i, &j) in joints.iter().enumerate() {
            if j >= NUM_JOINTS {
                return Err(Error::InvalidArgument(format!("joint index {j} out of range")));
            }
            if joints[..i].contains(&j) {
                return Err(Error::InvalidArgument(format!("duplicate tracked joint {j}")));
            }
        }
        Ok(Self { joints })
    }

    /// Head and both wrists.
    pub fn three_point() -> Self {
        Self { joints: vec![HEAD, L_WRIST, R_WRIST] }
    }

    /// Pelvis, head and both wrists.
    pub fn four_point() -> Self {
        Self { joints: vec![PELVIS, HEAD, L_WRIST, R_WRIST] }
    }

    pub fn with_count(n: usize) -> Result<Self> {
        match n {
            3 => Ok(Self::three_point()),
            4 => Ok(Self::four_point()),
            _ => Err(Error::InvalidArgument(format!("tracked joint count must be 3 or 4, got {n}"))),
        }
    }

    pub fn joints(&self) -> &[usize] {
        &self.joints
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn width(&self) -> usize {
        FEATURES_PER_JOINT * self.joints.len()
    }

    /// Column of the first value for joint slot `slot`.
    pub fn slot_offset(&self, slot: usize) -> usize {
        FEATURES_PER_JOINT * slot
    }

    pub fn slot_of(&self, joint: usize) -> Option<usize> {
        self.joints.iter().position(|&j| j == joint)
    }
}

/// Frame-major `len × width` matrix of tracking features.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseObservation<T> {
    joints: TrackedJointSet,
    data: Vec<T>,
    fps: f64,
}

impl<T: Real> SparseObservation<T> {
    pub fn from_rows(joints: TrackedJointSet, rows: Vec<Vec<T>>, fps: f64) -> Result<Self> {
        let width = joints.width();
        let mut data = Vec::with_capacity(rows.len() * width);
        for (t, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(Error::DimensionMismatch(format!("row {t} has {} values, expected {width}", r.len())));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("row {t} contains non-finite values")));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { joints, data, fps })
    }

    pub fn joints(&self) -> &TrackedJointSet {
        &self.joints
    }

    pub fn width(&self) -> usize {
        self.joints.width()
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.width()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn row(&self, t: usize) -> &[T] {
        let w = self.width();
        &self.data[t * w..(t + 1) * w]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Frames `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let w = self.width();
        Self { joints: self.joints.clone(), data: self.data[start * w..end * w].to_vec(), fps: self.fps }
    }

    /// Global position of tracked joint `joint` at frame `t`.
    pub fn position(&self, t: usize, joint: usize) -> Option<Vec3<T>> {
        let slot = self.joints.slot_of(joint)?;
        let o = self.joints.slot_offset(slot) + POS_OFFSET;
        let r = self.row(t);
        Some(Vec3::new(r[o], r[o + 1], r[o + 2]))
    }

    /// Text form: a header line then one whitespace-separated row per frame.
    /// Values use the shortest representation that parses back to the same bits.
    pub fn serialize(&self) -> String {
        let joints: Vec<String> = self.joints.joints().iter().map(|j| j.to_string()).collect();
        let mut out = format!("# sparse-observation v1 fps={} joints={}\n", self.fps, joints.join(","));
        for t in 0..self.len() {
            let row: Vec<String> = self.row(t).iter().map(|v| v.as_f64().to_string()).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::InvalidFile("empty observation text".into()))?;
        let rest = header
            .strip_prefix("# sparse-observation v1 ")
            .ok_or_else(|| Error::UnsupportedFormat("missing observation header".into()))?;
        let mut fps = None;
        let mut joints = None;
        for kv in rest.split_whitespace() {
            match kv.split_once('=') {
                Some(("fps", v)) => fps = v.parse::<f64>().ok(),
                Some(("joints", v)) => {
                    joints = v.split(',').map(|s| s.parse::<usize>().ok()).collect::<Option<Vec<_>>>()
                }
                _ => {}
            }
        }
        let fps = fps.ok_or_else(|| Error::InvalidFile("missing fps".into()))?;
        let joints = TrackedJointSet::new(joints.ok_or_else(|| Error::InvalidFile("missing joints".into()))?)?;
        let rows = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split_whitespace()
                    .map(|v| v.parse::<f64>().map(T::lit).map_err(|e| Error::InvalidFile(e.to_string())))
                    .collect::<Result<Vec<T>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(joints, rows, fps)
    }
}

/// Builds the sparse signal for `joints` from ground-truth motion.
///
/// Frame 0 uses an identity rotation delta and a zero positional delta.
pub fn extract_observation<T: Real>(
    seq: &MotionSequence<T>,
    tree: &KinematicTree<T>,
    joints: &TrackedJointSet,
) -> Result<SparseObservation<T>> {
    let globals = forward_kinematics(seq, tree)?;
    let mut rows = Vec::with_capacity(globals.len());
    for t in 0..globals.len() {
        let mut row = Vec::with_capacity(joints.width());
        for &j in joints.joints() {
            let rot = globals[t].rotations[j];
            let pos = globals[t].positions[j];
            let (dr, dp) = if t == 0 {
                (Mat3::identity(), Vec3::zero())
            } else {
                let prev = &globals[t - 1];
                (rot * prev.rotations[j].transpose(), pos - prev.positions[j])
            };
            row.extend_from_slice(&Rotation6D::from_matrix_unchecked(&rot).values);
            row.extend_from_slice(&pos.0);
            row.extend_from_slice(&Rotation6D::from_matrix_unchecked(&dr).values);
            row.extend_from_slice(&dp.0);
        }
        rows.push(row);
    }
    SparseObservation::from_rows(joints.clone(), rows, seq.fps)
}

/// Keeps the last `target_len` frames, or front-pads with copies of frame 0.
pub fn pad_front<T: Real>(obs: &SparseObservation<T>, target_len: usize) -> Result<SparseObservation<T>> {
    if obs.is_empty() {
        return Err(Error::InvalidArgument("cannot pad an empty observation".into()));
    }
    if target_len == 0 {
        return Err(Error::InvalidArgument("target length must be positive".into()));
    }
    let n = obs.len();
    if n >= target_len {
        return Ok(obs.slice(n - target_len, n));
    }
    let w = obs.width();
    let mut data = Vec::with_capacity(target_len * w);
    for _ in 0..target_len - n {
        data.extend_from_slice(obs.row(0));
    }
    data.extend_from_slice(&obs.data);
    Ok(SparseObservation { joints: obs.joints.clone(), data, fps: obs.fps })
}

/// Shifts every tracked position horizontally (x and z; y is up) so the
/// `anchor` joint sits above the origin in the last frame.
pub fn recenter_horizontal<T: Real>(obs: &SparseObservation<T>, anchor: usize) -> Result<SparseObservation<T>> {
    let slot = obs
        .joints
        .slot_of(anchor)
        .ok_or_else(|| Error::InvalidArgument(format!("joint {anchor} is not tracked")))?;
    if obs.is_empty() {
        return Ok(obs.clone());
    }
    let last = obs.row(obs.len() - 1);
    let base = obs.joints.slot_offset(slot) + POS_OFFSET;
    let (dx, dz) = (last[base], last[base + 2]);
    let mut out = obs.clone();
    let w = obs.width();
    for row in out.data.chunks_mut(w) {
        for s in 0..obs.joints.len() {
            let c = obs.joints.slot_offset(s) + POS_OFFSET;
            row[c] = row[c] - dx;
            row[c + 2] = row[c + 2] - dz;
        }
    }
    Ok(out)
}
