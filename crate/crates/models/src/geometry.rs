//! Differentiable rotation and forward-kinematics ops on tensors, plus the
//! elementwise losses shared by the training objectives.

use std::sync::Arc;

use candle_core::{DType, Device, Tensor, D};
use stratavatar_core::{KinematicTree, Real};

use crate::fk_op::{FkOp, Topology};
use crate::Result;

const NORM_EPS: f64 = 1e-20;

/// Euclidean norm over the last axis. Exact zero at the origin, finite gradient everywhere.
pub fn safe_norm(x: &Tensor) -> Result<Tensor> {
    let s = (x.sqr()?.sum(D::Minus1)? + NORM_EPS)?.sqrt()?;
    Ok((s - NORM_EPS.sqrt())?.relu()?)
}

/// Smooth-L1 (Huber with unit threshold), averaged over all elements.
pub fn smooth_l1(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let a = (pred - target)?.abs()?;
    let m = a.minimum(1.0)?;
    let per = ((m.sqr()? * 0.5)? + (a - m)?)?;
    Ok(per.mean_all()?)
}

pub fn mse(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    Ok((pred - target)?.sqr()?.mean_all()?)
}

/// Six-value rotations `(..., 6)` to matrices `(..., 3, 3)` by Gram–Schmidt.
pub fn rot6d_to_matrix(x: &Tensor) -> Result<Tensor> {
    let a1 = x.narrow(D::Minus1, 0, 3)?;
    let a2 = x.narrow(D::Minus1, 3, 3)?;
    let normalize = |v: &Tensor| -> Result<Tensor> {
        let n = (v.sqr()?.sum_keepdim(D::Minus1)? + 1e-12)?.sqrt()?;
        Ok(v.broadcast_div(&n)?)
    };
    let b1 = normalize(&a1)?;
    let d = (&b1 * &a2)?.sum_keepdim(D::Minus1)?;
    let b2 = normalize(&(a2 - b1.broadcast_mul(&d)?)?)?;
    let b3 = cross(&b1, &b2)?;
    Ok(Tensor::stack(&[b1, b2, b3], D::Minus1)?)
}

pub fn cross(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let c = |t: &Tensor, i| t.narrow(D::Minus1, i, 1);
    let (a0, a1, a2) = (c(a, 0)?, c(a, 1)?, c(a, 2)?);
    let (b0, b1, b2) = (c(b, 0)?, c(b, 1)?, c(b, 2)?);
    Ok(Tensor::cat(
        &[((&a1 * &b2)? - (&a2 * &b1)?)?, ((&a2 * &b0)? - (&a0 * &b2)?)?, ((&a0 * &b1)? - (&a1 * &b0)?)?],
        D::Minus1,
    )?)
}

/// Skeleton topology and rest offsets for batched forward kinematics.
#[derive(Debug, Clone)]
pub struct TensorSkeleton {
    op: FkOp,
}

impl TensorSkeleton {
    pub fn new<T: Real>(tree: &KinematicTree<T>, _dtype: DType, _dev: &Device) -> Result<Self> {
        let topo = Topology {
            parents: tree.parents().to_vec(),
            offsets: tree.offsets().iter().map(|o| o.0.map(|v| v.as_f64())).collect(),
        };
        Ok(Self { op: FkOp(Arc::new(topo)) })
    }

    pub fn len(&self) -> usize {
        self.op.0.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Joint positions `(..., J, 3)` with the root at the origin, from
    /// six-value local rotations `(..., J*6)`.
    pub fn positions(&self, rot6d: &Tensor) -> Result<Tensor> {
        let dims = rot6d.dims().to_vec();
        let lead: Vec<usize> = dims[..dims.len() - 1].to_vec();
        let m: usize = lead.iter().product();
        let j = self.len();
        let pos = rot6d.reshape((m, j * 6))?.contiguous()?.apply_op1(self.op.clone())?;
        let mut shape = lead;
        shape.extend([j, 3]);
        Ok(pos.reshape(shape)?)
    }
}

/// Product of stacks of 3×3 matrices `(..., 3, 3)` via broadcasting;
/// far cheaper than a batched GEMM for tiny matrices.
pub fn matmul3(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let r = a.rank();
    Ok(a.unsqueeze(r)?.broadcast_mul(&b.unsqueeze(r - 2)?)?.sum(r - 1)?)
}

/// Mean Euclidean distance between matching points `(..., 3)`.
pub fn mean_distance(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(safe_norm(&(a - b)?)?.mean_all()?)
}

/// Mean per-joint jerk magnitude of positions `(batch, frames, joints, 3)`,
/// scaled by `fps³ / (frames - 3)`, summed over time and averaged over joints and batch.
pub fn jitter_loss(positions: &Tensor, fps: f64) -> Result<Tensor> {
    let n = positions.dim(1)?;
    if n < 4 {
        return Err(stratavatar_core::Error::TooShort { needed: 4, got: n }.into());
    }
    let d = |x: &Tensor| -> Result<Tensor> {
        let k = x.dim(1)?;
        Ok((x.narrow(1, 1, k - 1)? - x.narrow(1, 0, k - 1)?)?)
    };
    let jerk = d(&d(&d(positions)?)?)?;
    let mag = safe_norm(&jerk)?;
    let per_joint = mag.sum(1)?;
    Ok((per_joint.mean_all()? * (fps.powi(3) / (n - 3) as f64))?)
}

/// Mean distance between per-frame velocities of two position streams `(batch, frames, joints, 3)`.
pub fn velocity_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let n = pred.dim(1)?;
    if n < 2 {
        return Ok(Tensor::zeros((), pred.dtype(), pred.device())?);
    }
    let v = |x: &Tensor| -> Result<Tensor> { Ok((x.narrow(1, 1, n - 1)? - x.narrow(1, 0, n - 1)?)?) };
    mean_distance(&v(pred)?, &v(target)?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use stratavatar_core::kinematics::{fk_pose, Pose};
    use stratavatar_core::{Mat3, Rotation6D, Vec3};

    #[test]
    fn rot6d_matches_scalar_gram_schmidt() {
        let raw = [0.3f64, -1.2, 0.5, 0.7, 0.2, -0.9];
        let m = rot6d_to_matrix(&Tensor::new(&raw, &Device::Cpu).unwrap()).unwrap().to_vec2::<f64>().unwrap();
        let oracle = Rotation6D::new(raw).to_matrix().unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert!((m[r][c] - oracle.0[r][c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fk_matches_scalar_fk() {
        let tree = KinematicTree::<f64>::smpl();
        let sk = TensorSkeleton::new(&tree, DType::F64, &Device::Cpu).unwrap();
        let mut rots = Vec::new();
        for j in 0..22 {
            let m = Mat3::from_rotation_vector(&Vec3::new(0.03 * j as f64, 0.1 - j as f64 * 0.005, 0.02));
            rots.push(Rotation6D::from_matrix(&m).unwrap());
        }
        let pose = Pose::new(rots, Vec3::new(0.0, 0.0, 0.0));
        let flat = pose.rotation_vector();
        let t = Tensor::new(flat.as_slice(), &Device::Cpu).unwrap().reshape((1, 132)).unwrap();
        let p = sk.positions(&t).unwrap().to_vec3::<f64>().unwrap();
        let oracle = fk_pose(&pose, &tree).unwrap();
        for j in 0..22 {
            for k in 0..3 {
                assert!((p[0][j][k] - oracle.positions[j].0[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fk_gradient_matches_finite_differences() {
        let tree = KinematicTree::<f64>::smpl();
        let sk = TensorSkeleton::new(&tree, DType::F64, &Device::Cpu).unwrap();
        let raw: Vec<f64> = (0..132).map(|i| ((i * 37 % 101) as f64 / 50.0 - 1.0) + if i % 6 == 0 || i % 6 == 4 { 1.5 } else { 0.0 }).collect();
        let w: Vec<f64> = (0..66).map(|i| ((i * 13 % 17) as f64 / 8.0) - 1.0).collect();
        let wt = Tensor::from_vec(w, (1, 22, 3), &Device::Cpu).unwrap();
        let f = |v: &[f64]| -> f64 {
            let t = Tensor::new(v, &Device::Cpu).unwrap().reshape((1, 132)).unwrap();
            scalar(&(sk.positions(&t).unwrap() * &wt).unwrap().sum_all().unwrap()).unwrap()
        };
        let var = candle_core::Var::from_tensor(&Tensor::new(raw.as_slice(), &Device::Cpu).unwrap().reshape((1, 132)).unwrap()).unwrap();
        let loss = (sk.positions(var.as_tensor()).unwrap() * &wt).unwrap().sum_all().unwrap();
        let g = loss.backward().unwrap().get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let h = 1e-6;
        for i in 0..132 {
            let mut a = raw.clone();
            let mut b = raw.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "coord {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn smooth_l1_both_branches() {
        let p = Tensor::new(&[0.5f64, 3.0, 0.0, 0.0], &Device::Cpu).unwrap();
        let z = Tensor::zeros(4, DType::F64, &Device::Cpu).unwrap();
        let v = scalar(&smooth_l1(&p, &z).unwrap()).unwrap();
        assert!((v - (0.125 + 2.5) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn jitter_cubic_and_quadratic() {
        let fps = 60.0;
        let n = 10;
        let mk = |f: &dyn Fn(f64) -> f64| {
            let v: Vec<f64> = (0..n).flat_map(|i| [f(i as f64), 0.0, 0.0]).collect();
            Tensor::from_vec(v, (1, n, 1, 3), &Device::Cpu).unwrap()
        };
        let quad = scalar(&jitter_loss(&mk(&|t| 0.5 * t * t + t), fps).unwrap()).unwrap();
        assert!(quad.abs() < 1e-10);
        let cubic = scalar(&jitter_loss(&mk(&|t| t * t * t), fps).unwrap()).unwrap();
        let expect = fps.powi(3) * 6.0;
        assert!(((cubic - expect) / expect).abs() < 1e-9);
        assert!(jitter_loss(&mk(&|t| t).narrow(1, 0, 3).unwrap(), fps).is_err());
    }

    #[test]
    fn safe_norm_gradient_is_finite_at_zero() {
        let v = candle_core::Var::zeros((2, 3), DType::F32, &Device::Cpu).unwrap();
        let g = safe_norm(v.as_tensor()).unwrap().sum_all().unwrap().backward().unwrap();
        let gv = g.get(v.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(gv.iter().all(|x| x.is_finite()));
    }
}
