//! Conversions from core motion types to training tensors.

use candle_core::{DType, Device, Tensor};
use stratavatar_core::dataset::window::window_starts;
use stratavatar_core::observations::POS_OFFSET;
use stratavatar_core::{MotionSequence, Real, SparseObservation, TrackedJointSet};

use crate::Result;

/// Local rotations of every frame, `(N, 132)`.
pub fn rotation_tensor<T: Real>(seq: &MotionSequence<T>, dtype: DType, dev: &Device) -> Result<Tensor> {
    let rows = seq.rotation_rows();
    let w = rows.first().map_or(0, |r| r.len());
    let flat: Vec<f64> = rows.iter().flatten().map(|v| v.as_f64()).collect();
    Ok(Tensor::from_vec(flat, (rows.len(), w), dev)?.to_dtype(dtype)?)
}

/// Observation rows, `(N, F)`.
pub fn observation_tensor<T: Real>(obs: &SparseObservation<T>, dtype: DType, dev: &Device) -> Result<Tensor> {
    let flat: Vec<f64> = obs.data().iter().map(|v| v.as_f64()).collect();
    Ok(Tensor::from_vec(flat, (obs.len(), obs.width()), dev)?.to_dtype(dtype)?)
}

/// Stack every `length`-frame window (given stride) of each `(N_i, W)` tensor into `(count, length, W)`.
pub fn stack_windows(items: &[Tensor], length: usize, stride: usize) -> Result<Tensor> {
    let mut out = Vec::new();
    for t in items {
        for s in window_starts(t.dim(0)?, length, stride) {
            out.push(t.narrow(0, s, length)?);
        }
    }
    Ok(Tensor::stack(&out, 0)?)
}

/// Row subset of a tensor by item indices.
pub fn select(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let i = Tensor::new(idx.iter().map(|&i| i as u32).collect::<Vec<_>>(), t.device())?;
    Ok(t.index_select(&i, 0)?)
}

/// Tensor form of `recenter_horizontal` over windows `(count, T, F)`.
pub fn recenter_windows(windows: &Tensor, joints: &TrackedJointSet, anchor: usize) -> Result<Tensor> {
    let slot = joints
        .slot_of(anchor)
        .ok_or_else(|| stratavatar_core::Error::InvalidArgument(format!("joint {anchor} is not tracked")))?;
    let (_, t, f) = windows.dims3()?;
    let base = joints.slot_offset(slot) + POS_OFFSET;
    let last = windows.narrow(1, t - 1, 1)?;
    let dx = last.narrow(2, base, 1)?;
    let dz = last.narrow(2, base + 2, 1)?;
    let mut mx = vec![0f64; f];
    let mut mz = vec![0f64; f];
    for s in 0..joints.len() {
        let c = joints.slot_offset(s) + POS_OFFSET;
        mx[c] = 1.0;
        mz[c + 2] = 1.0;
    }
    let mx = Tensor::new(mx, windows.device())?.to_dtype(windows.dtype())?;
    let mz = Tensor::new(mz, windows.device())?.to_dtype(windows.dtype())?;
    let shift = (dx.broadcast_mul(&mx)? + dz.broadcast_mul(&mz)?)?;
    Ok(windows.broadcast_sub(&shift)?)
}
