//! Seeded procedural motion corpus.
//!
//! Each sequence is built from smooth joint-angle trajectories: a sinusoidal
//! gait with coupled arm swing, or a standing reach/wave where the legs
//! follow the torso (low reaches bend the knees). Frame axes follow the
//! bundled skeleton: y up, z forward, x to the body's left.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::motion_file::MotionFile;
use crate::error::{Error, Result};
use crate::kinematics::{KinematicTree, MotionSequence, Pose, Rotation6D, NUM_JOINTS};
use crate::linalg::{Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionStyle {
    Walk,
    Reach,
    Wave,
}

/// Relative sampling weights of the styles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleMix {
    pub walk: f64,
    pub reach: f64,
    pub wave: f64,
}

impl Default for StyleMix {
    fn default() -> Self {
        Self { walk: 0.5, reach: 0.3, wave: 0.2 }
    }
}

impl StyleMix {
    fn pick(&self, rng: &mut impl Rng) -> MotionStyle {
        let total = self.walk + self.reach + self.wave;
        let u = rng.random::<f64>() * total;
        if u < self.walk {
            MotionStyle::Walk
        } else if u < self.walk + self.reach {
            MotionStyle::Reach
        } else {
            MotionStyle::Wave
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub sequences: usize,
    pub frames: usize,
    pub fps: f64,
    pub seed: u64,
    #[serde(default)]
    pub style_mix: StyleMix,
    /// Half-width of the uniform heading range, radians.
    #[serde(default = "default_heading_range")]
    pub heading_range: f64,
}

fn default_heading_range() -> f64 {
    PI / 3.0
}

impl SyntheticConfig {
    pub fn new(sequences: usize, frames: usize, fps: f64, seed: u64) -> Self {
        Self { sequences, frames, fps, seed, style_mix: StyleMix::default(), heading_range: default_heading_range() }
    }
}

/// Per-sequence random parameters.
#[derive(Debug, Clone)]
struct Params {
    style: MotionStyle,
    heading: f64,
    turn_rate: f64,
    start: Vec3<f64>,
    freq: f64,
    phase: f64,
    stride: f64,
    hip_amp: f64,
    knee_amp: f64,
    arm_swing: f64,
    arm_down: f64,
    elbow_rest: f64,
    lean: f64,
    look_amp: f64,
    look_freq: f64,
    /// -1 = left arm only, 1 = right arm only, 0 = both.
    side: i32,
    reach_height: f64,
    wave_freq: f64,
}

impl Params {
    fn draw(rng: &mut ChaCha8Rng, style: MotionStyle, heading_range: f64) -> Self {
        let side = match rng.random_range(0..3) {
            0 => -1,
            1 => 1,
            _ => 0,
        };
        Self {
            style,
            heading: rng.random_range(-heading_range..=heading_range),
            turn_rate: rng.random_range(-0.2..0.2),
            start: Vec3::new(rng.random_range(-1.0..1.0), 0.0, rng.random_range(-1.0..1.0)),
            freq: match style {
                MotionStyle::Walk => rng.random_range(0.8..1.1),
                _ => rng.random_range(0.2..0.45),
            },
            phase: rng.random_range(0.0..TAU),
            stride: rng.random_range(1.1..1.5),
            hip_amp: rng.random_range(0.3..0.5),
            knee_amp: rng.random_range(0.5..0.9),
            arm_swing: rng.random_range(0.2..0.45),
            arm_down: rng.random_range(1.15..1.35),
            elbow_rest: rng.random_range(0.1..0.4),
            lean: rng.random_range(0.0..0.12),
            look_amp: rng.random_range(0.05..0.3),
            look_freq: rng.random_range(0.1..0.4),
            side,
            reach_height: rng.random_range(-1.0..1.0),
            wave_freq: rng.random_range(1.2..2.0),
        }
    }
}

const PELVIS_HEIGHT: f64 = 0.93;

/// Local rotation matrices for all joints at time `t` seconds, plus root translation.
fn frame(p: &Params, t: f64) -> (Vec<Mat3<f64>>, Vec3<f64>) {
    let mut r = vec![Mat3::identity(); NUM_JOINTS];
    let heading = p.heading + p.turn_rate * t;
    let look = p.look_amp * (TAU * p.look_freq * t + p.phase).sin();
    let sway = 0.03 * (TAU * 0.3 * t + 2.0 * p.phase).sin();
    let mut height = PELVIS_HEIGHT;
    let mut forward = 0.0;

    // arm angles: shoulder lowering, forward swing, elbow flex, per side (left, right)
    let mut down = [p.arm_down, p.arm_down];
    let mut swing = [0.0, 0.0];
    let mut elbow = [p.elbow_rest, p.elbow_rest];
    let mut elbow_side = [0.0, 0.0];
    let hips: [f64; 2];
    let knees: [f64; 2];
    let mut ankles = [0.0, 0.0];
    let mut spine_lean = p.lean;
    let spine_twist: f64;
    let mut pelvis_roll = sway;

    match p.style {
        MotionStyle::Walk => {
            let phi = TAU * p.freq * t + p.phase;
            let s = phi.sin();
            hips = [-p.hip_amp * s, p.hip_amp * s];
            let flex = |x: f64| 0.5 * (1.0 - x.cos());
            knees = [p.knee_amp * flex(phi + 0.6), p.knee_amp * flex(phi + PI + 0.6)];
            ankles = [-0.2 * (phi + 0.3).sin(), 0.2 * (phi + 0.3).sin()];
            swing = [p.arm_swing * s, -p.arm_swing * s];
            elbow = [p.elbow_rest + 0.15 * (1.0 + s), p.elbow_rest + 0.15 * (1.0 - s)];
            spine_twist = -0.12 * s;
            pelvis_roll = 0.05 * s;
            height = PELVIS_HEIGHT - 0.02 + 0.02 * (2.0 * phi).cos();
            forward = p.stride * p.freq * t;
        }
        MotionStyle::Reach => {
            let reach = 0.5 * (1.0 - (TAU * p.freq * t + p.phase).cos());
            let crouch = (-p.reach_height).max(0.0) * reach;
            let raise = p.reach_height.max(0.0) * reach;
            for (i, active) in [p.side <= 0, p.side >= 0].into_iter().enumerate() {
                if active {
                    down[i] = p.arm_down * (1.0 - 0.6 * reach) - 0.9 * raise;
                    swing[i] = -1.1 * reach - 0.3 * crouch;
                    elbow[i] = p.elbow_rest * (1.0 - reach);
                }
            }
            spine_lean = p.lean + 0.55 * crouch;
            hips = [-0.7 * crouch, -0.7 * crouch];
            knees = [1.2 * crouch, 1.2 * crouch];
            ankles = [-0.45 * crouch, -0.45 * crouch];
            height = PELVIS_HEIGHT - 0.28 * crouch;
            spine_twist = 0.15 * p.side as f64 * reach;
        }
        MotionStyle::Wave => {
            let w = (TAU * p.wave_freq * t + p.phase).sin();
            let i = if p.side > 0 { 1 } else { 0 };
            down[i] = -0.35;
            elbow[i] = 0.0;
            elbow_side[i] = 1.4 + 0.35 * w;
            let shift = (TAU * p.freq * t + p.phase).sin();
            pelvis_roll = 0.06 * shift;
            hips = [-0.06 * shift, 0.06 * shift];
            knees = [0.08 * (1.0 + shift), 0.08 * (1.0 - shift)];
            spine_twist = 0.08 * shift;
        }
    }

    r[0] = Mat3::rot_y(heading) * Mat3::rot_z(pelvis_roll) * Mat3::rot_x(0.3 * spine_lean);
    r[1] = Mat3::rot_x(hips[0]) * Mat3::rot_z(-pelvis_roll);
    r[2] = Mat3::rot_x(hips[1]) * Mat3::rot_z(-pelvis_roll);
    r[4] = Mat3::rot_x(knees[0]);
    r[5] = Mat3::rot_x(knees[1]);
    r[7] = Mat3::rot_x(ankles[0]);
    r[8] = Mat3::rot_x(ankles[1]);
    for j in [3, 6, 9] {
        r[j] = Mat3::rot_x(spine_lean / 3.0) * Mat3::rot_y(spine_twist / 3.0) * Mat3::rot_z(-pelvis_roll / 3.0);
    }
    r[12] = Mat3::rot_y(0.4 * look) * Mat3::rot_x(-0.3 * spine_lean);
    r[15] = Mat3::rot_y(0.6 * look) * Mat3::rot_x(0.1 * (TAU * p.look_freq * 1.7 * t).sin());
    // left arm rests along +x, right arm along -x
    r[16] = Mat3::rot_x(-swing[0]) * Mat3::rot_z(-down[0]);
    r[17] = Mat3::rot_x(-swing[1]) * Mat3::rot_z(down[1]);
    r[18] = Mat3::rot_y(-elbow[0]) * Mat3::rot_z(elbow_side[0]);
    r[19] = Mat3::rot_y(elbow[1]) * Mat3::rot_z(-elbow_side[1]);
    r[20] = Mat3::rot_x(0.1 * look);
    r[21] = Mat3::rot_x(-0.1 * look);

    let dir = Mat3::rot_y(p.heading).mul_vec(&Vec3::new(0.0, 0.0, 1.0));
    let turn_dir = Mat3::rot_y(heading).mul_vec(&Vec3::new(0.0, 0.0, 1.0));
    // heading changes slowly, so blending the start and current directions keeps the path smooth
    let travel = (dir + turn_dir).scale(0.5 * forward);
    let trans = p.start + Vec3::new(travel[0], height, travel[2]);
    (r, trans)
}

/// One sequence with explicit style, for tests and fixtures.
pub fn generate_sequence(style: MotionStyle, frames: usize, fps: f64, seed: u64) -> MotionSequence<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = Params::draw(&mut rng, style, default_heading_range());
    build(&p, frames, fps)
}

fn build(p: &Params, frames: usize, fps: f64) -> MotionSequence<f64> {
    let poses = (0..frames)
        .map(|i| {
            let (rots, trans) = frame(p, i as f64 / fps);
            Pose::new(rots.iter().map(Rotation6D::from_matrix_unchecked).collect(), trans)
        })
        .collect();
    MotionSequence::new(poses, fps).expect("nonempty sequence with positive fps")
}

/// Deterministic corpus of `(name, file)` pairs.
pub fn generate_synthetic(cfg: &SyntheticConfig, tree: &KinematicTree<f64>) -> Result<Vec<(String, MotionFile)>> {
    if cfg.sequences == 0 {
        return Err(Error::InvalidArgument("need at least one sequence".into()));
    }
    if cfg.frames < 20 {
        return Err(Error::InvalidArgument(format!("need at least 20 frames, got {}", cfg.frames)));
    }
    if !(cfg.fps > 0.0) {
        return Err(Error::InvalidArgument("fps must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.sequences)
        .map(|i| {
            let style = cfg.style_mix.pick(&mut rng);
            let p = Params::draw(&mut rng, style, cfg.heading_range);
            let seq = build(&p, cfg.frames, cfg.fps);
            let name = format!("synth_{i:05}_{}", format!("{style:?}").to_lowercase());
            Ok((name, MotionFile::from_sequence(&seq, tree)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::jitter_metric;

    #[test]
    fn requested_shape() {
        let tree = KinematicTree::smpl();
        let corpus = generate_synthetic(&SyntheticConfig::new(8, 200, 60.0, 1), &tree).unwrap();
        assert_eq!(corpus.len(), 8);
        assert!(corpus.iter().all(|(_, f)| f.frame_count() == 200));
    }

    #[test]
    fn same_seed_same_bytes() {
        let tree = KinematicTree::smpl();
        let a = generate_synthetic(&SyntheticConfig::new(4, 40, 60.0, 9), &tree).unwrap();
        let b = generate_synthetic(&SyntheticConfig::new(4, 40, 60.0, 9), &tree).unwrap();
        let c = generate_synthetic(&SyntheticConfig::new(4, 40, 60.0, 10), &tree).unwrap();
        let bytes = |v: &[(String, MotionFile)]| v.iter().flat_map(|(_, f)| f.to_bytes()).collect::<Vec<u8>>();
        assert_eq!(bytes(&a), bytes(&b));
        assert_ne!(bytes(&a), bytes(&c));
    }

    #[test]
    fn rotations_are_valid() {
        for style in [MotionStyle::Walk, MotionStyle::Reach, MotionStyle::Wave] {
            let seq = generate_sequence(style, 30, 60.0, 3);
            for f in &seq.frames {
                for r in &f.local_rotations {
                    let m = r.to_matrix().unwrap();
                    assert!(m.orthonormality_error() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn generated_motion_is_smooth() {
        let tree = KinematicTree::smpl();
        for (seed, style) in [MotionStyle::Walk, MotionStyle::Reach, MotionStyle::Wave].into_iter().enumerate() {
            let seq = generate_sequence(style, 240, 60.0, seed as u64);
            let j = jitter_metric(&seq, &tree, 60.0).unwrap();
            assert!(j < 3.0, "{style:?} jitter {j}");
        }
    }

    #[test]
    fn rejects_short_sequences() {
        let tree = KinematicTree::smpl();
        assert!(generate_synthetic(&SyntheticConfig::new(1, 19, 60.0, 0), &tree).is_err());
        assert!(generate_synthetic(&SyntheticConfig::new(0, 40, 60.0, 0), &tree).is_err());
    }
}
