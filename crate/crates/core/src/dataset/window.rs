//! Fixed-length overlapping windows over a motion sequence.

use crate::error::{Error, Result};
use crate::kinematics::MotionSequence;
use crate::scalar::Real;

/// Start frames of all windows of `length` frames with `stride`.
pub fn window_starts(frames: usize, length: usize, stride: usize) -> Vec<usize> {
    if length == 0 || stride == 0 || frames < length {
        return Vec::new();
    }
    (0..=frames - length).step_by(stride).collect()
}

/// Windows of `length` frames; `length` must be divisible by the downsampling `rate`.
pub fn window<T: Real>(seq: &MotionSequence<T>, length: usize, stride: usize, rate: usize) -> Result<Vec<MotionSequence<T>>> {
    if length == 0 || rate == 0 || !length.is_multiple_of(rate) {
        return Err(Error::LengthMismatch(format!("window length {length} not divisible by rate {rate}")));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    Ok(window_starts(seq.len(), length, stride).into_iter().map(|s| seq.slice(s, s + length)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{Pose, NUM_JOINTS};
    use crate::linalg::Vec3;

    fn seq(n: usize) -> MotionSequence<f64> {
        let frames = (0..n)
            .map(|t| {
                let mut p = Pose::identity(NUM_JOINTS);
                p.root_translation = Vec3::new(t as f64, 0.0, 0.0);
                p
            })
            .collect();
        MotionSequence::new(frames, 60.0).unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(window(&seq(20), 20, 1, 2).unwrap().len(), 1);
        assert_eq!(window(&seq(25), 20, 1, 2).unwrap().len(), 6);
        assert_eq!(window(&seq(19), 20, 1, 2).unwrap().len(), 0);
        assert_eq!(window(&seq(45), 20, 5, 2).unwrap().len(), 6);
        assert!(window(&seq(25), 21, 1, 2).is_err());
    }

    #[test]
    fn windows_index_back_into_source() {
        let s = seq(30);
        for (i, w) in window(&s, 20, 1, 2).unwrap().iter().enumerate() {
            assert_eq!(w.frames[..], s.frames[i..i + 20]);
        }
    }
}
