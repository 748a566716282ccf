//! Rotation algebra, the body kinematic tree and forward kinematics.
//!
//! Joint rotations are stored in the continuous 6D form (first two columns
//! of the rotation matrix). Global joint transforms are composed root to
//! leaf along the tree; positions are in meters.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;

pub const NUM_JOINTS: usize = 22;
pub const ROT6D_DIM: usize = 6;
/// Rotation values per full-body pose: 22 × 6.
pub const POSE_DIM: usize = NUM_JOINTS * ROT6D_DIM;

pub const PELVIS: usize = 0;
pub const HEAD: usize = 15;
pub const L_WRIST: usize = 20;
pub const R_WRIST: usize = 21;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "Pelvis", "L_Hip", "R_Hip", "Spine1", "L_Knee", "R_Knee", "Spine2", "L_Ankle", "R_Ankle",
    "Spine3", "L_Foot", "R_Foot", "Neck", "L_Collar", "R_Collar", "Head", "L_Shoulder",
    "R_Shoulder", "L_Elbow", "R_Elbow", "L_Wrist", "R_Wrist",
];

const DEGENERATE_EPS: f64 = 1e-8;
const ORTHONORMAL_TOL: f64 = 1e-6;

/// First two columns of a rotation matrix: `a1 = values[0..3]`, `a2 = values[3..6]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation6D<T> {
    pub values: [T; 6],
}

impl<T: Real> Rotation6D<T> {
    pub fn new(values: [T; 6]) -> Self {
        Self { values }
    }

    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self { values: [o, z, z, z, o, z] }
    }

    pub fn from_slice(s: &[T]) -> Self {
        let mut values = [T::zero(); 6];
        values.copy_from_slice(&s[..6]);
        Self { values }
    }

    /// Gram–Schmidt orthonormalisation into a proper rotation matrix.
    pub fn to_matrix(&self) -> Result<Mat3<T>> {
        let v = &self.values;
        let a1 = Vec3::new(v[0], v[1], v[2]);
        let a2 = Vec3::new(v[3], v[4], v[5]);
        let n1 = a1.norm();
        if !(n1 > T::lit(DEGENERATE_EPS)) {
            return Err(Error::DegenerateRotation(format!("|a1| = {n1}")));
        }
        let b1 = a1.scale(T::one() / n1);
        let resid = a2 - b1.scale(b1.dot(&a2));
        let n2 = resid.norm();
        if !(n2 > T::lit(DEGENERATE_EPS)) {
            return Err(Error::DegenerateRotation("a1 and a2 are parallel".into()));
        }
        let b2 = resid.scale(T::one() / n2);
        let b3 = b1.cross(&b2);
        Ok(Mat3::from_cols(b1, b2, b3))
    }

    /// Reads the first two columns of `m` after checking it is a rotation.
    pub fn from_matrix(m: &Mat3<T>) -> Result<Self> {
        let err = m.orthonormality_error();
        if !(err <= T::lit(ORTHONORMAL_TOL)) || m.det() < T::zero() {
            return Err(Error::NotARotation(err.as_f64()));
        }
        Ok(Self::from_matrix_unchecked(m))
    }

    pub fn from_matrix_unchecked(m: &Mat3<T>) -> Self {
        let (c0, c1) = (m.col(0), m.col(1));
        Self { values: [c0[0], c0[1], c0[2], c1[0], c1[1], c1[2]] }
    }
}

/// Free-function spelling of [`Rotation6D::to_matrix`].
pub fn to_matrix<T: Real>(r: &Rotation6D<T>) -> Result<Mat3<T>> {
    r.to_matrix()
}

/// Free-function spelling of [`Rotation6D::from_matrix`].
pub fn to_6d<T: Real>(m: &Mat3<T>) -> Result<Rotation6D<T>> {
    Rotation6D::from_matrix(m)
}

/// On-disk skeleton description.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SkeletonConfig {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    pub joint_names: Vec<String>,
    pub parent: Vec<i64>,
    pub offset: Vec<[f64; 3]>,
}

pub const SKELETON_FORMAT_VERSION: u32 = 1;
const DEFAULT_SKELETON_TOML: &str = include_str!("../assets/skeleton_smpl_mean.toml");

impl SkeletonConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        if cfg.version != SKELETON_FORMAT_VERSION {
            return Err(Error::UnsupportedFormat(format!("skeleton version {}", cfg.version)));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("skeleton config serializes")
    }

    pub fn default_smpl() -> Self {
        Self::from_toml(DEFAULT_SKELETON_TOML).expect("bundled skeleton is valid")
    }
}

/// Rooted joint hierarchy in topological order (parents precede children).
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTree<T> {
    joint_names: Vec<String>,
    parent: Vec<Option<usize>>,
    offset: Vec<Vec3<T>>,
}

impl<T: Real> KinematicTree<T> {
    pub fn new(joint_names: Vec<String>, parent: Vec<Option<usize>>, offset: Vec<Vec3<T>>) -> Result<Self> {
        let n = parent.len();
        if n == 0 {
            return Err(Error::InvalidTree("empty tree".into()));
        }
        if joint_names.len() != n || offset.len() != n {
            return Err(Error::InvalidTree(format!(
                "{} names, {} parents, {} offsets",
                joint_names.len(),
                n,
                offset.len()
            )));
        }
        if parent[0].is_some() {
            return Err(Error::InvalidTree("joint 0 must be the root".into()));
        }
        for (j, p) in parent.iter().enumerate().skip(1) {
            match p {
                None => return Err(Error::InvalidTree(format!("second root at joint {j}"))),
                Some(p) if *p >= j => {
                    return Err(Error::InvalidTree(format!("parent {p} of joint {j} is not earlier")))
                }
                _ => {}
            }
        }
        Ok(Self { joint_names, parent, offset })
    }

    pub fn from_config(cfg: &SkeletonConfig) -> Result<Self> {
        let parent = cfg
            .parent
            .iter()
            .map(|&p| if p < 0 { None } else { Some(p as usize) })
            .collect();
        let offset = cfg.offset.iter().map(|o| Vec3(o.map(T::lit))).collect();
        Self::new(cfg.joint_names.clone(), parent, offset)
    }

    pub fn to_config(&self) -> SkeletonConfig {
        SkeletonConfig {
            version: SKELETON_FORMAT_VERSION,
            name: String::new(),
            joint_names: self.joint_names.clone(),
            parent: self.parent.iter().map(|p| p.map_or(-1, |p| p as i64)).collect(),
            offset: self.offset.iter().map(|o| o.0.map(|v| v.as_f64())).collect(),
        }
    }

    /// The bundled 22-joint mean-shape skeleton.
    pub fn smpl() -> Self {
        Self::from_config(&SkeletonConfig::default_smpl()).expect("bundled skeleton is valid")
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parent[j]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn offset(&self, j: usize) -> Vec3<T> {
        self.offset[j]
    }

    pub fn offsets(&self) -> &[Vec3<T>] {
        &self.offset
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    /// Ancestors of `j` ordered root first, excluding `j`.
    pub fn ancestors(&self, j: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.parent[j];
        while let Some(p) = cur {
            out.push(p);
            cur = self.parent[p];
        }
        out.reverse();
        out
    }

    /// Restriction to `joints` (which must contain the root and be closed
    /// under taking parents). Joint order follows `joints`.
    pub fn subtree(&self, joints: &[usize]) -> Result<Self> {
        let mut local = vec![usize::MAX; self.len()];
        for (i, &j) in joints.iter().enumerate() {
            local[j] = i;
        }
        let mut parent = Vec::with_capacity(joints.len());
        for &j in joints {
            match self.parent[j] {
                None => parent.push(None),
                Some(p) if local[p] == usize::MAX => {
                    return Err(Error::InvalidTree(format!("joint {j} has parent {p} outside the subset")))
                }
                Some(p) => parent.push(Some(local[p])),
            }
        }
        Self::new(
            joints.iter().map(|&j| self.joint_names[j].clone()).collect(),
            parent,
            joints.iter().map(|&j| self.offset[j]).collect(),
        )
    }

    /// SHA-256 over names, parents and offsets (as f64 little-endian).
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for j in 0..self.len() {
            h.update(self.joint_names[j].as_bytes());
            h.update([0u8]);
            h.update((self.parent[j].map_or(-1, |p| p as i32)).to_le_bytes());
            for v in self.offset[j].0 {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

/// Index sets for the upper and lower halves of the body; both contain the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BodyPartition {
    pub upper: Vec<usize>,
    pub lower: Vec<usize>,
}

impl BodyPartition {
    pub fn smpl() -> Self {
        Self {
            upper: vec![0, 3, 6, 9, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21],
            lower: vec![0, 1, 2, 4, 5, 7, 8, 10, 11],
        }
    }

    /// Joint indices for one half.
    pub fn joints(&self, part: Part) -> &[usize] {
        match part {
            Part::Upper => &self.upper,
            Part::Lower => &self.lower,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Upper,
    Lower,
}

impl Part {
    pub fn as_str(self) -> &'static str {
        match self {
            Part::Upper => "upper",
            Part::Lower => "lower",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pose<T> {
    pub local_rotations: Vec<Rotation6D<T>>,
    pub root_translation: Vec3<T>,
}

impl<T: Real> Pose<T> {
    pub fn new(local_rotations: Vec<Rotation6D<T>>, root_translation: Vec3<T>) -> Self {
        Self { local_rotations, root_translation }
    }

    pub fn identity(joints: usize) -> Self {
        Self { local_rotations: vec![Rotation6D::identity(); joints], root_translation: Vec3::zero() }
    }

    pub fn num_joints(&self) -> usize {
        self.local_rotations.len()
    }

    /// Flat rotation vector (`6 × joints` values).
    pub fn rotation_vector(&self) -> Vec<T> {
        self.local_rotations.iter().flat_map(|r| r.values).collect()
    }

    pub fn from_rotation_vector(values: &[T], root_translation: Vec3<T>) -> Self {
        Self {
            local_rotations: values.chunks_exact(ROT6D_DIM).map(Rotation6D::from_slice).collect(),
            root_translation,
        }
    }
}

/// Half-body pose: rotations for the joints listed in the partition, in partition order.
#[derive(Debug, Clone, PartialEq)]
pub struct PartPose<T> {
    pub part: Part,
    pub rotations: Vec<Rotation6D<T>>,
    pub root_translation: Vec3<T>,
}

pub fn split_pose<T: Real>(p: &Pose<T>, partition: &BodyPartition) -> (PartPose<T>, PartPose<T>) {
    let pick = |part: Part| PartPose {
        part,
        rotations: partition.joints(part).iter().map(|&j| p.local_rotations[j]).collect(),
        root_translation: p.root_translation,
    };
    (pick(Part::Upper), pick(Part::Lower))
}

/// Inverse of [`split_pose`]; the root rotation and translation come from the upper half.
pub fn merge_pose<T: Real>(upper: &PartPose<T>, lower: &PartPose<T>, partition: &BodyPartition) -> Result<Pose<T>> {
    if upper.rotations.len() != partition.upper.len() || lower.rotations.len() != partition.lower.len() {
        return Err(Error::DimensionMismatch("half-pose sizes do not match the partition".into()));
    }
    let n = partition.upper.len() + partition.lower.len() - 1;
    let mut rots = vec![Rotation6D::identity(); n];
    for (&j, r) in partition.lower.iter().zip(&lower.rotations) {
        rots[j] = *r;
    }
    for (&j, r) in partition.upper.iter().zip(&upper.rotations) {
        rots[j] = *r;
    }
    Ok(Pose::new(rots, upper.root_translation))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence<T> {
    pub frames: Vec<Pose<T>>,
    pub fps: f64,
}

impl<T: Real> MotionSequence<T> {
    pub fn new(frames: Vec<Pose<T>>, fps: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidArgument("motion sequence must be nonempty".into()));
        }
        if !(fps > 0.0) {
            return Err(Error::InvalidArgument(format!("fps must be positive, got {fps}")));
        }
        Ok(Self { frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self { frames: self.frames[start..end].to_vec(), fps: self.fps }
    }

    /// Frame-major flat rotation matrix (`len × 6·joints`).
    pub fn rotation_rows(&self) -> Vec<Vec<T>> {
        self.frames.iter().map(Pose::rotation_vector).collect()
    }

    /// Replaces every root translation, keeping rotations.
    pub fn with_root_translations(&self, trans: &[Vec3<T>]) -> Self {
        let frames = self
            .frames
            .iter()
            .zip(trans)
            .map(|(f, t)| Pose::new(f.local_rotations.clone(), *t))
            .collect();
        Self { frames, fps: self.fps }
    }
}

/// Global rotations and positions of every joint for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFrame<T> {
    pub rotations: Vec<Mat3<T>>,
    pub positions: Vec<Vec3<T>>,
}

/// Forward kinematics for a single pose.
pub fn fk_pose<T: Real>(pose: &Pose<T>, tree: &KinematicTree<T>) -> Result<GlobalFrame<T>> {
    let n = tree.len();
    if pose.num_joints() != n {
        return Err(Error::DimensionMismatch(format!("pose has {} joints, tree has {n}", pose.num_joints())));
    }
    let mut rotations: Vec<Mat3<T>> = Vec::with_capacity(n);
    let mut positions: Vec<Vec3<T>> = Vec::with_capacity(n);
    for j in 0..n {
        let local = pose.local_rotations[j].to_matrix()?;
        match tree.parent(j) {
            None => {
                rotations.push(local);
                positions.push(pose.root_translation);
            }
            Some(p) => {
                let gp = rotations[p];
                positions.push(positions[p] + gp.mul_vec(&tree.offset(j)));
                rotations.push(gp * local);
            }
        }
    }
    Ok(GlobalFrame { rotations, positions })
}

/// Forward kinematics for every frame of a sequence.
pub fn forward_kinematics<T: Real>(seq: &MotionSequence<T>, tree: &KinematicTree<T>) -> Result<Vec<GlobalFrame<T>>> {
    seq.frames.iter().map(|p| fk_pose(p, tree)).collect()
}

/// Positions only, `[frame][joint]`.
pub fn joint_positions<T: Real>(seq: &MotionSequence<T>, tree: &KinematicTree<T>) -> Result<Vec<Vec<Vec3<T>>>> {
    Ok(forward_kinematics(seq, tree)?.into_iter().map(|g| g.positions).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_6d_is_identity_matrix() {
        let m = Rotation6D::<f64>::identity().to_matrix().unwrap();
        assert_eq!(m, Mat3::identity());
    }

    #[test]
    fn gram_schmidt_removes_parallel_component() {
        let m = Rotation6D::new([1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).to_matrix().unwrap();
        assert_eq!(m, Mat3::<f64>::identity());
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let zero = Rotation6D::new([0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(zero.to_matrix(), Err(Error::DegenerateRotation(_))));
        let parallel = Rotation6D::new([1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(matches!(parallel.to_matrix(), Err(Error::DegenerateRotation(_))));
        let nan = Rotation6D::new([f64::NAN, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(nan.to_matrix().is_err());
    }

    #[test]
    fn rz_quarter_turn_to_6d() {
        let r = to_6d(&Mat3::<f64>::rot_z(FRAC_PI_2)).unwrap();
        let expect = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
        for (a, b) in r.values.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn non_rotation_is_rejected() {
        let mut m = Mat3::<f64>::identity();
        m.0[0][0] = 1.1;
        assert!(matches!(to_6d(&m), Err(Error::NotARotation(_))));
        let mut refl = Mat3::<f64>::identity();
        refl.0[2][2] = -1.0;
        assert!(to_6d(&refl).is_err());
    }

    #[test]
    fn bundled_tree_is_valid() {
        let tree = KinematicTree::<f64>::smpl();
        assert_eq!(tree.len(), NUM_JOINTS);
        for (name, expect) in tree.joint_names().iter().zip(JOINT_NAMES) {
            assert_eq!(name, expect);
        }
        assert_eq!(tree.ancestors(R_WRIST), vec![0, 3, 6, 9, 14, 17, 19]);
    }

    #[test]
    fn tree_validation() {
        let names = vec!["a".to_string(), "b".to_string()];
        let off = vec![Vec3::<f64>::zero(); 2];
        assert!(KinematicTree::new(names.clone(), vec![None, None], off.clone()).is_err());
        assert!(KinematicTree::new(names.clone(), vec![Some(0), None], off.clone()).is_err());
        assert!(KinematicTree::new(names, vec![None, Some(1)], off).is_err());
    }

    #[test]
    fn rest_pose_positions_are_offset_sums() {
        let tree = KinematicTree::<f64>::smpl();
        let g = fk_pose(&Pose::identity(NUM_JOINTS), &tree).unwrap();
        for j in 0..NUM_JOINTS {
            let mut expect = Vec3::zero();
            for a in tree.ancestors(j).into_iter().skip(1).chain(std::iter::once(j)) {
                if a != 0 {
                    expect = expect + tree.offset(a);
                }
            }
            assert!((g.positions[j] - expect).norm() < 1e-12, "joint {j}");
            assert_eq!(g.rotations[j], Mat3::identity());
        }
    }

    #[test]
    fn two_joint_chain_rotated_root() {
        let tree = KinematicTree::new(
            vec!["root".into(), "tip".into()],
            vec![None, Some(0)],
            vec![Vec3::zero(), Vec3::new(1.0, 0.0, 0.0)],
        )
        .unwrap();
        let root = to_6d(&Mat3::<f64>::rot_z(FRAC_PI_2)).unwrap();
        let pose = Pose::new(vec![root, Rotation6D::identity()], Vec3::zero());
        let g = fk_pose(&pose, &tree).unwrap();
        assert!((g.positions[1] - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn split_sizes_and_merge_round_trip() {
        let part = BodyPartition::smpl();
        let mut pose = Pose::<f64>::identity(NUM_JOINTS);
        for (j, r) in pose.local_rotations.iter_mut().enumerate() {
            *r = to_6d(&Mat3::rot_x(0.1 * j as f64)).unwrap();
        }
        pose.root_translation = Vec3::new(0.5, 1.0, -2.0);
        let (u, l) = split_pose(&pose, &part);
        assert_eq!(u.rotations.len(), 14);
        assert_eq!(l.rotations.len(), 9);
        assert_eq!(u.rotations[0], l.rotations[0]);
        let merged = merge_pose(&u, &l, &part).unwrap();
        assert_eq!(merged.rotation_vector(), pose.rotation_vector());
        assert_eq!(merged, pose);
    }

    #[test]
    fn tpose_halves_are_identity() {
        let (u, l) = split_pose(&Pose::<f32>::identity(NUM_JOINTS), &BodyPartition::smpl());
        assert!(u.rotations.iter().chain(&l.rotations).all(|r| *r == Rotation6D::identity()));
    }

    #[test]
    fn partition_covers_tree_with_shared_root() {
        let part = BodyPartition::smpl();
        let mut seen = [0usize; NUM_JOINTS];
        for &j in part.upper.iter().chain(&part.lower) {
            seen[j] += 1;
        }
        assert_eq!(seen[0], 2);
        assert!(seen[1..].iter().all(|&c| c == 1));
        let tree = KinematicTree::<f64>::smpl();
        assert_eq!(tree.subtree(&part.upper).unwrap().len(), 14);
        assert_eq!(tree.subtree(&part.lower).unwrap().len(), 9);
    }

    #[test]
    fn skeleton_config_round_trip() {
        let tree = KinematicTree::<f64>::smpl();
        let text = tree.to_config().to_toml();
        let back = KinematicTree::<f64>::from_config(&SkeletonConfig::from_toml(&text).unwrap()).unwrap();
        assert_eq!(back, tree);
        assert_eq!(back.hash(), tree.hash());
    }
}
