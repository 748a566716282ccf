//! Forward kinematics from six-value rotations as a fused CPU op with a
//! hand-written reverse pass.

use std::sync::Arc;

use candle_core::{CpuStorage, CustomOp1, CustomOp2, Layout, Shape, Tensor};
use stratavatar_core::Real;

const EPS: f64 = 1e-12;

#[derive(Debug)]
pub(crate) struct Topology {
    pub parents: Vec<Option<usize>>,
    pub offsets: Vec<[f64; 3]>,
}

#[derive(Debug, Clone)]
pub(crate) struct FkOp(pub Arc<Topology>);

struct FkGrad(Arc<Topology>);

type M3<T> = [[T; 3]; 3];

fn dot<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross<T: Real>(a: &[T; 3], b: &[T; 3]) -> [T; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

struct Gs<T> {
    b1: [T; 3],
    b2: [T; 3],
    b3: [T; 3],
    n1: T,
    n2: T,
    a2: [T; 3],
}

fn gram_schmidt<T: Real>(v: &[T]) -> Gs<T> {
    let a1 = [v[0], v[1], v[2]];
    let a2 = [v[3], v[4], v[5]];
    let n1 = (dot(&a1, &a1) + T::lit(EPS)).sqrt();
    let b1 = a1.map(|x| x / n1);
    let d = dot(&b1, &a2);
    let u = [a2[0] - d * b1[0], a2[1] - d * b1[1], a2[2] - d * b1[2]];
    let n2 = (dot(&u, &u) + T::lit(EPS)).sqrt();
    let b2 = u.map(|x| x / n2);
    let b3 = cross(&b1, &b2);
    Gs { b1, b2, b3, n1, n2, a2 }
}

impl<T: Real> Gs<T> {
    fn matrix(&self) -> M3<T> {
        let mut m = [[T::zero(); 3]; 3];
        for r in 0..3 {
            m[r] = [self.b1[r], self.b2[r], self.b3[r]];
        }
        m
    }

    /// Adjoint of the six inputs given the adjoint of the matrix.
    fn backward(&self, gm: &M3<T>) -> [T; 6] {
        let col = |c: usize| [gm[0][c], gm[1][c], gm[2][c]];
        let (mut g1, mut g2, g3) = (col(0), col(1), col(2));
        let x = cross(&self.b2, &g3);
        let y = cross(&g3, &self.b1);
        for i in 0..3 {
            g1[i] = g1[i] + x[i];
            g2[i] = g2[i] + y[i];
        }
        let p = dot(&self.b2, &g2);
        let gu: [T; 3] = std::array::from_fn(|i| (g2[i] - self.b2[i] * p) / self.n2);
        let bu = dot(&self.b1, &gu);
        let ba = dot(&self.b1, &self.a2);
        let ga2: [T; 3] = std::array::from_fn(|i| gu[i] - self.b1[i] * bu);
        for i in 0..3 {
            g1[i] = g1[i] - (ba * gu[i] + self.a2[i] * bu);
        }
        let q = dot(&self.b1, &g1);
        let ga1: [T; 3] = std::array::from_fn(|i| (g1[i] - self.b1[i] * q) / self.n1);
        [ga1[0], ga1[1], ga1[2], ga2[0], ga2[1], ga2[2]]
    }
}

fn mul<T: Real>(a: &M3<T>, b: &M3<T>) -> M3<T> {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j]))
}

fn mul_vec<T: Real>(a: &M3<T>, v: &[T; 3]) -> [T; 3] {
    std::array::from_fn(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

impl Topology {
    fn forward_one<T: Real>(&self, rot: &[T], out: &mut [T]) {
        let j = self.parents.len();
        let mut g: Vec<M3<T>> = Vec::with_capacity(j);
        for k in 0..j {
            let r = gram_schmidt(&rot[k * 6..k * 6 + 6]).matrix();
            match self.parents[k] {
                None => {
                    out[k * 3..k * 3 + 3].fill(T::zero());
                    g.push(r);
                }
                Some(p) => {
                    let o = self.offsets[k].map(T::lit);
                    let d = mul_vec(&g[p], &o);
                    for i in 0..3 {
                        out[k * 3 + i] = out[p * 3 + i] + d[i];
                    }
                    g.push(mul(&g[p], &r));
                }
            }
        }
    }

    fn backward_one<T: Real>(&self, rot: &[T], grad_pos: &[T], out: &mut [T]) {
        let j = self.parents.len();
        let gs: Vec<Gs<T>> = (0..j).map(|k| gram_schmidt(&rot[k * 6..k * 6 + 6])).collect();
        let r: Vec<M3<T>> = gs.iter().map(|g| g.matrix()).collect();
        let mut g: Vec<M3<T>> = Vec::with_capacity(j);
        for k in 0..j {
            g.push(match self.parents[k] {
                None => r[k],
                Some(p) => mul(&g[p], &r[k]),
            });
        }
        let mut gp: Vec<[T; 3]> = (0..j).map(|k| [grad_pos[k * 3], grad_pos[k * 3 + 1], grad_pos[k * 3 + 2]]).collect();
        let mut gg: Vec<M3<T>> = vec![[[T::zero(); 3]; 3]; j];
        let mut gr: Vec<M3<T>> = vec![[[T::zero(); 3]; 3]; j];
        for k in (0..j).rev() {
            match self.parents[k] {
                None => gr[k] = gg[k],
                Some(p) => {
                    // G_k = G_p R_k, p_k = p_p + G_p o_k
                    let gpt = g[p];
                    gr[k] = std::array::from_fn(|a| {
                        std::array::from_fn(|b| gpt[0][a] * gg[k][0][b] + gpt[1][a] * gg[k][1][b] + gpt[2][a] * gg[k][2][b])
                    });
                    let o = self.offsets[k].map(T::lit);
                    let rk = r[k];
                    let ggk = gg[k];
                    let gpk = gp[k];
                    for a in 0..3 {
                        for b in 0..3 {
                            let v = ggk[a][0] * rk[b][0] + ggk[a][1] * rk[b][1] + ggk[a][2] * rk[b][2] + gpk[a] * o[b];
                            gg[p][a][b] = gg[p][a][b] + v;
                        }
                        gp[p][a] = gp[p][a] + gpk[a];
                    }
                }
            }
        }
        for k in 0..j {
            out[k * 6..k * 6 + 6].copy_from_slice(&gs[k].backward(&gr[k]));
        }
    }
}

fn contiguous<'a, T: candle_core::WithDType>(s: &'a CpuStorage, l: &Layout) -> candle_core::Result<&'a [T]> {
    let Some((a, b)) = l.contiguous_offsets() else {
        candle_core::bail!("fk op requires contiguous input")
    };
    Ok(&s.as_slice::<T>()?[a..b])
}

impl FkOp {
    fn run<T: Real + candle_core::WithDType>(&self, x: &[T], m: usize) -> Vec<T> {
        let j = self.0.parents.len();
        let mut out = vec![T::zero(); m * j * 3];
        for (r, o) in x.chunks(j * 6).zip(out.chunks_mut(j * 3)) {
            self.0.forward_one(r, o);
        }
        out
    }
}

impl CustomOp1 for FkOp {
    fn name(&self) -> &'static str {
        "forward-kinematics"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let j = self.0.parents.len();
        let (m, w) = l.shape().dims2()?;
        if w != j * 6 {
            candle_core::bail!("fk op expects {} features, got {w}", j * 6);
        }
        let st = match s {
            CpuStorage::F32(_) => CpuStorage::F32(self.run(contiguous::<f32>(s, l)?, m)),
            CpuStorage::F64(_) => CpuStorage::F64(self.run(contiguous::<f64>(s, l)?, m)),
            _ => candle_core::bail!("fk op supports f32 and f64"),
        };
        Ok((st, Shape::from((m, j, 3))))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let g = arg.apply_op2_no_bwd(&grad.contiguous()?, &FkGrad(self.0.clone()))?;
        Ok(Some(g))
    }
}

impl FkGrad {
    fn run<T: Real + candle_core::WithDType>(&self, x: &[T], g: &[T], m: usize) -> Vec<T> {
        let j = self.0.parents.len();
        let mut out = vec![T::zero(); m * j * 6];
        for ((r, gp), o) in x.chunks(j * 6).zip(g.chunks(j * 3)).zip(out.chunks_mut(j * 6)) {
            self.0.backward_one(r, gp, o);
        }
        out
    }
}

impl CustomOp2 for FkGrad {
    fn name(&self) -> &'static str {
        "forward-kinematics-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (m, _) = l1.shape().dims2()?;
        let st = match (s1, s2) {
            (CpuStorage::F32(_), CpuStorage::F32(_)) => {
                CpuStorage::F32(self.run(contiguous::<f32>(s1, l1)?, contiguous::<f32>(s2, l2)?, m))
            }
            (CpuStorage::F64(_), CpuStorage::F64(_)) => {
                CpuStorage::F64(self.run(contiguous::<f64>(s1, l1)?, contiguous::<f64>(s2, l2)?, m))
            }
            _ => candle_core::bail!("fk grad dtype mismatch"),
        };
        Ok((st, l1.shape().clone()))
    }
}
