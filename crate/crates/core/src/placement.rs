//! Global placement of predicted poses from the observed head position.

use crate::error::{Error, Result};
use crate::kinematics::{fk_pose, KinematicTree, MotionSequence, Pose, HEAD};
use crate::linalg::Vec3;
use crate::scalar::Real;

/// Root translation that puts the head of `pose` (under FK) exactly at `head`.
pub fn root_translation_for_head<T: Real>(pose: &Pose<T>, head: Vec3<T>, tree: &KinematicTree<T>) -> Result<Vec3<T>> {
    let at_origin = Pose::new(pose.local_rotations.clone(), Vec3::zero());
    let g = fk_pose(&at_origin, tree)?;
    Ok(head - g.positions[HEAD])
}

/// Per-frame root translations so FK head positions match `heads`.
pub fn recover_root_translation<T: Real>(
    rotations: &MotionSequence<T>,
    heads: &[Vec3<T>],
    tree: &KinematicTree<T>,
) -> Result<Vec<Vec3<T>>> {
    if heads.len() != rotations.len() {
        return Err(Error::LengthMismatch(format!("{} head positions for {} frames", heads.len(), rotations.len())));
    }
    rotations.frames.iter().zip(heads).map(|(p, &h)| root_translation_for_head(p, h, tree)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{joint_positions, to_6d, NUM_JOINTS};
    use crate::linalg::Mat3;

    fn seq() -> MotionSequence<f64> {
        let frames = (0..5)
            .map(|t| {
                let mut p = Pose::identity(NUM_JOINTS);
                for j in 0..NUM_JOINTS {
                    p.local_rotations[j] = to_6d(&Mat3::rot_y(0.05 * (t + j) as f64)).unwrap();
                }
                p.root_translation = Vec3::new(0.1 * t as f64, 0.9, -0.2);
                p
            })
            .collect();
        MotionSequence::new(frames, 60.0).unwrap()
    }

    #[test]
    fn recovers_ground_truth_translation() {
        let tree = KinematicTree::smpl();
        let s = seq();
        let heads: Vec<_> = joint_positions(&s, &tree).unwrap().iter().map(|p| p[HEAD]).collect();
        let rec = recover_root_translation(&s, &heads, &tree).unwrap();
        for (r, f) in rec.iter().zip(&s.frames) {
            assert!((*r - f.root_translation).norm() < 1e-9);
        }
        let d = Vec3::new(0.3, -0.1, 2.0);
        let shifted: Vec<_> = heads.iter().map(|h| *h + d).collect();
        let rec2 = recover_root_translation(&s, &shifted, &tree).unwrap();
        for (a, b) in rec2.iter().zip(&rec) {
            assert!((*a - (*b + d)).norm() < 1e-12);
        }
    }

    #[test]
    fn head_error_is_zero_for_wrong_rotations() {
        let tree = KinematicTree::smpl();
        let s = seq();
        let heads: Vec<_> = joint_positions(&s, &tree).unwrap().iter().map(|p| p[HEAD]).collect();
        let mut wrong = s.clone();
        for f in &mut wrong.frames {
            f.local_rotations[3] = to_6d(&Mat3::rot_x(0.8)).unwrap();
        }
        let rec = recover_root_translation(&wrong, &heads, &tree).unwrap();
        let placed = wrong.with_root_translations(&rec);
        for (p, h) in joint_positions(&placed, &tree).unwrap().iter().zip(&heads) {
            assert!((p[HEAD] - *h).norm() < 1e-12);
        }
    }
}
