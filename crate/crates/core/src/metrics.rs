//! Evaluation metrics: MPJRE, MPJPE (and part-wise variants), MPJVE and Jitter.
//!
//! Internal units are meters/seconds/radians; results are reported in
//! degrees, centimeters, cm/s and 10² m/s³.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{joint_positions, BodyPartition, KinematicTree, MotionSequence, L_WRIST, PELVIS, R_WRIST};
use crate::linalg::Vec3;
use crate::scalar::Real;

/// CSV header: the eight metric columns, in table order.
pub const CSV_HEADER: [&str; 8] = ["MPJRE", "MPJPE", "MPJVE", "Hand PE", "Upper PE", "Lower PE", "Root PE", "Jitter"];

pub const CONVENTIONS: &str = "MPJRE: mean geodesic angle between local joint rotations, degrees. \
PE columns: mean joint position error in cm with ground-truth root translation applied to both sequences. \
MPJVE: cm/s. Jitter: mean jerk magnitude of the evaluated sequence, 10^2 m/s^3.";

fn check_same_len<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(format!("{} vs {} frames", a.len(), b.len())));
    }
    Ok(())
}

/// Mean geodesic angle between predicted and ground-truth local rotations, in degrees.
pub fn mpjre<T: Real>(pred: &MotionSequence<T>, gt: &MotionSequence<T>) -> Result<T> {
    check_same_len(&pred.frames, &gt.frames)?;
    let mut sum = T::zero();
    let mut count = 0usize;
    for (p, g) in pred.frames.iter().zip(&gt.frames) {
        if p.num_joints() != g.num_joints() {
            return Err(Error::DimensionMismatch("joint count differs".into()));
        }
        for (rp, rg) in p.local_rotations.iter().zip(&g.local_rotations) {
            sum = sum + rp.to_matrix()?.geodesic_angle(&rg.to_matrix()?);
            count += 1;
        }
    }
    Ok((sum / T::lit(count as f64)).to_degrees())
}

/// Per-frame joint positions.
type Positions<T> = Vec<Vec<Vec3<T>>>;

/// Joint positions of `pred` and `gt`, both using the ground-truth root translation.
pub fn aligned_positions<T: Real>(
    pred: &MotionSequence<T>,
    gt: &MotionSequence<T>,
    tree: &KinematicTree<T>,
) -> Result<(Positions<T>, Positions<T>)> {
    check_same_len(&pred.frames, &gt.frames)?;
    let trans: Vec<Vec3<T>> = gt.frames.iter().map(|f| f.root_translation).collect();
    let pp = joint_positions(&pred.with_root_translations(&trans), tree)?;
    let gp = joint_positions(gt, tree)?;
    Ok((pp, gp))
}

/// Mean Euclidean distance over frames and `subset` joints, in the input unit.
pub fn mean_position_error<T: Real>(pred: &[Vec<Vec3<T>>], gt: &[Vec<Vec3<T>>], subset: &[usize]) -> Result<T> {
    check_same_len(pred, gt)?;
    if subset.is_empty() || pred.is_empty() {
        return Err(Error::InvalidArgument("empty frame or joint set".into()));
    }
    let mut sum = T::zero();
    for (p, g) in pred.iter().zip(gt) {
        for &j in subset {
            sum = sum + (p[j] - g[j]).norm();
        }
    }
    Ok(sum / T::lit((pred.len() * subset.len()) as f64))
}

/// Part-wise MPJPE in centimeters over `joint_subset`.
pub fn mpjpe_family<T: Real>(
    pred: &MotionSequence<T>,
    gt: &MotionSequence<T>,
    tree: &KinematicTree<T>,
    joint_subset: &[usize],
) -> Result<T> {
    let (pp, gp) = aligned_positions(pred, gt, tree)?;
    Ok(mean_position_error(&pp, &gp, joint_subset)? * T::lit(100.0))
}

/// Mean velocity error in cm/s from per-frame positions.
pub fn mpjve_of_positions<T: Real>(pred: &[Vec<Vec3<T>>], gt: &[Vec<Vec3<T>>], fps: f64) -> Result<T> {
    check_same_len(pred, gt)?;
    let n = pred.len();
    if n < 2 {
        return Err(Error::TooShort { needed: 2, got: n });
    }
    let joints = pred[0].len();
    let f = T::lit(fps);
    let mut sum = T::zero();
    for t in 1..n {
        for j in 0..joints {
            let vp = (pred[t][j] - pred[t - 1][j]).scale(f);
            let vg = (gt[t][j] - gt[t - 1][j]).scale(f);
            sum = sum + (vp - vg).norm();
        }
    }
    Ok(sum / T::lit(((n - 1) * joints) as f64) * T::lit(100.0))
}

pub fn mpjve<T: Real>(pred: &MotionSequence<T>, gt: &MotionSequence<T>, tree: &KinematicTree<T>, fps: f64) -> Result<T> {
    check_same_len(&pred.frames, &gt.frames)?;
    if pred.len() < 2 {
        return Err(Error::TooShort { needed: 2, got: pred.len() });
    }
    mpjve_of_positions(&joint_positions(pred, tree)?, &joint_positions(gt, tree)?, fps)
}

/// Mean jerk magnitude in 10² m/s³ from per-frame positions in meters.
pub fn jitter_of_positions<T: Real>(pos: &[Vec<Vec3<T>>], fps: f64) -> Result<T> {
    let n = pos.len();
    if n < 4 {
        return Err(Error::TooShort { needed: 4, got: n });
    }
    let joints = pos[0].len();
    let f3 = T::lit(fps.powi(3));
    let three = T::lit(3.0);
    let mut sum = T::zero();
    for t in 0..n - 3 {
        for j in 0..joints {
            let jerk = pos[t + 3][j] - pos[t + 2][j].scale(three) + pos[t + 1][j].scale(three) - pos[t][j];
            sum = sum + jerk.norm() * f3;
        }
    }
    Ok(sum / T::lit(((n - 3) * joints) as f64) / T::lit(100.0))
}

pub fn jitter_metric<T: Real>(seq: &MotionSequence<T>, tree: &KinematicTree<T>, fps: f64) -> Result<T> {
    if seq.len() < 4 {
        return Err(Error::TooShort { needed: 4, got: seq.len() });
    }
    jitter_of_positions(&joint_positions(seq, tree)?, fps)
}

/// One row of metric values, in reporting units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricRow {
    pub mpjre: f64,
    pub mpjpe: f64,
    pub mpjve: f64,
    pub hand_pe: f64,
    pub upper_pe: f64,
    pub lower_pe: f64,
    pub root_pe: f64,
    pub jitter: f64,
}

impl MetricRow {
    pub fn values(&self) -> [f64; 8] {
        [self.mpjre, self.mpjpe, self.mpjve, self.hand_pe, self.upper_pe, self.lower_pe, self.root_pe, self.jitter]
    }

    fn from_values(v: [f64; 8]) -> Self {
        Self {
            mpjre: v[0],
            mpjpe: v[1],
            mpjve: v[2],
            hand_pe: v[3],
            upper_pe: v[4],
            lower_pe: v[5],
            root_pe: v[6],
            jitter: v[7],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.values().iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub name: String,
    pub frames: usize,
    pub metrics: MetricRow,
}

/// Per-sequence metrics (pose-isolated) for one predicted sequence.
///
/// The predicted root translation is replaced by the ground truth before any
/// position-based metric, so every column measures rotation-induced error.
pub fn evaluate_sequence<T: Real>(
    name: &str,
    pred: &MotionSequence<T>,
    gt: &MotionSequence<T>,
    tree: &KinematicTree<T>,
    partition: &BodyPartition,
) -> Result<SequenceMetrics> {
    let (pp, gp) = aligned_positions(pred, gt, tree)?;
    let all: Vec<usize> = (0..tree.len()).collect();
    let cm = |subset: &[usize]| -> Result<f64> { Ok(mean_position_error(&pp, &gp, subset)?.as_f64() * 100.0) };
    let metrics = MetricRow {
        mpjre: mpjre(pred, gt)?.as_f64(),
        mpjpe: cm(&all)?,
        mpjve: mpjve_of_positions(&pp, &gp, pred.fps)?.as_f64(),
        hand_pe: cm(&[L_WRIST, R_WRIST])?,
        upper_pe: cm(&partition.upper[1..])?,
        lower_pe: cm(&partition.lower[1..])?,
        root_pe: cm(&[PELVIS])?,
        jitter: jitter_of_positions(&pp, pred.fps)?.as_f64(),
    };
    Ok(SequenceMetrics { name: name.to_string(), frames: pred.len(), metrics })
}

/// Per-sequence breakdown plus frame-weighted aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub conventions: String,
    pub aggregate: MetricRow,
    pub sequences: Vec<SequenceMetrics>,
}

impl EvalReport {
    pub fn from_sequences(sequences: Vec<SequenceMetrics>) -> Result<Self> {
        let total: usize = sequences.iter().map(|s| s.frames).sum();
        if total == 0 {
            return Err(Error::InvalidArgument("no frames to aggregate".into()));
        }
        let mut acc = [0.0; 8];
        for s in &sequences {
            let w = s.frames as f64 / total as f64;
            for (a, v) in acc.iter_mut().zip(s.metrics.values()) {
                *a += w * v;
            }
        }
        Ok(Self { conventions: CONVENTIONS.to_string(), aggregate: MetricRow::from_values(acc), sequences })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per sequence (report order), then the aggregate row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for row in self.sequences.iter().map(|s| &s.metrics).chain(std::iter::once(&self.aggregate)) {
            w.write_record(row.values().iter().map(|v| format!("{v:.6}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}
