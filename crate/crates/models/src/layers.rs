//! Transformer building blocks shared by the VQ-VAEs, the denoiser and the
//! full-body decoder.

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::{linear, Init, Linear, VarBuilder};

use crate::Result;

/// Layer norm over the last axis built from differentiable primitives.
#[derive(Debug, Clone)]
pub struct Norm {
    affine: Option<(Tensor, Tensor)>,
    eps: f64,
}

impl Norm {
    pub fn new(dim: usize, vb: VarBuilder) -> Result<Self> {
        let w = vb.get_with_hints(dim, "weight", Init::Const(1.0))?;
        let b = vb.get_with_hints(dim, "bias", Init::Const(0.0))?;
        Ok(Self { affine: Some((w, b)), eps: 1e-6 })
    }

    pub fn plain() -> Self {
        Self { affine: None, eps: 1e-6 }
    }
}

impl Module for Norm {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let n = x.dim(D::Minus1)? as f64;
        let mean = (x.sum_keepdim(D::Minus1)? / n)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = (xc.sqr()?.sum_keepdim(D::Minus1)? / n)?;
        let y = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        match &self.affine {
            Some((w, b)) => y.broadcast_mul(w)?.broadcast_add(b),
            None => Ok(y),
        }
    }
}

/// Linear layer whose weights and bias start at zero.
pub fn zero_linear(i: usize, o: usize, vb: VarBuilder) -> Result<Linear> {
    let w = vb.get_with_hints((o, i), "weight", Init::Const(0.0))?;
    let b = vb.get_with_hints(o, "bias", Init::Const(0.0))?;
    Ok(Linear::new(w, Some(b)))
}

#[derive(Debug, Clone)]
pub struct Attention {
    qkv: Linear,
    out: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(width: usize, heads: usize, vb: VarBuilder) -> Result<Self> {
        assert!(width.is_multiple_of(heads), "width must be divisible by heads");
        Ok(Self { qkv: linear(width, 3 * width, vb.pp("qkv"))?, out: linear(width, width, vb.pp("out"))?, heads })
    }

    /// `x`: (batch, tokens, width). `causal` masks attention to later tokens.
    pub fn forward(&self, x: &Tensor, causal: bool) -> Result<Tensor> {
        let (b, n, w) = x.dims3()?;
        let hd = w / self.heads;
        let qkv = self.qkv.forward(x)?.reshape((b, n, 3, self.heads, hd))?.permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let mut att = (q.matmul(&k.t()?)? / (hd as f64).sqrt())?;
        if causal {
            att = att.broadcast_add(&causal_mask(n, x.dtype(), x.device())?)?;
        }
        let att = candle_nn::ops::softmax(&att, D::Minus1)?;
        let y = att.matmul(&v)?.transpose(1, 2)?.reshape((b, n, w))?;
        Ok(self.out.forward(&y)?)
    }
}

fn causal_mask(n: usize, dtype: DType, dev: &Device) -> Result<Tensor> {
    let m: Vec<f32> = (0..n).flat_map(|i| (0..n).map(move |j| if j > i { -1e9 } else { 0.0 })).collect();
    Ok(Tensor::from_vec(m, (n, n), dev)?.to_dtype(dtype)?)
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(width: usize, hidden: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self { up: linear(width, hidden, vb.pp("up"))?, down: linear(hidden, width, vb.pp("down"))? })
    }
}

impl Module for FeedForward {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.silu()?)
    }
}

/// Pre-norm transformer layer.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    norm1: Norm,
    attn: Attention,
    norm2: Norm,
    ff: FeedForward,
}

impl TransformerLayer {
    pub fn new(width: usize, heads: usize, ff: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            norm1: Norm::new(width, vb.pp("norm1"))?,
            attn: Attention::new(width, heads, vb.pp("attn"))?,
            norm2: Norm::new(width, vb.pp("norm2"))?,
            ff: FeedForward::new(width, ff, vb.pp("ff"))?,
        })
    }

    pub fn forward(&self, x: &Tensor, causal: bool) -> Result<Tensor> {
        let x = (x + self.attn.forward(&self.norm1.forward(x)?, causal)?)?;
        Ok((&x + self.ff.forward(&self.norm2.forward(&x)?)?)?)
    }
}

/// Stack of transformer layers followed by a final norm.
#[derive(Debug, Clone)]
pub struct TransformerStack {
    layers: Vec<TransformerLayer>,
    norm: Norm,
}

impl TransformerStack {
    pub fn new(width: usize, heads: usize, ff: usize, depth: usize, vb: VarBuilder) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| TransformerLayer::new(width, heads, ff, vb.pp(format!("layer{i}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, norm: Norm::new(width, vb.pp("norm"))? })
    }

    pub fn forward(&self, x: &Tensor, causal: bool) -> Result<Tensor> {
        let mut x = x.clone();
        for l in &self.layers {
            x = l.forward(&x, causal)?;
        }
        Ok(self.norm.forward(&x)?)
    }
}

/// Sinusoidal embedding of integer diffusion steps, shape (batch, dim).
pub fn timestep_embedding(steps: &[usize], dim: usize, dtype: DType, dev: &Device) -> Result<Tensor> {
    let half = dim / 2;
    let mut v = Vec::with_capacity(steps.len() * dim);
    for &s in steps {
        for i in 0..dim {
            let j = i % half.max(1);
            let freq = (-(10000f64).ln() * j as f64 / half.max(1) as f64).exp();
            let a = s as f64 * freq;
            v.push(if i < half { a.cos() } else if i < 2 * half { a.sin() } else { 0.0 });
        }
    }
    Ok(Tensor::from_vec(v, (steps.len(), dim), dev)?.to_dtype(dtype)?)
}

/// `x * (1 + scale) + shift` with per-sample modulation of shape (batch, width).
fn modulate(x: &Tensor, shift: &Tensor, scale: &Tensor) -> Result<Tensor> {
    Ok(x.broadcast_mul(&(scale.unsqueeze(1)? + 1.0)?)?.broadcast_add(&shift.unsqueeze(1)?)?)
}

/// Transformer block modulated by a conditioning vector through adaptive
/// layer norm; modulation starts at zero so every block begins as identity.
#[derive(Debug, Clone)]
pub struct DitBlock {
    attn: Attention,
    ff: FeedForward,
    modulation: Linear,
}

impl DitBlock {
    pub fn new(width: usize, heads: usize, ff: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            attn: Attention::new(width, heads, vb.pp("attn"))?,
            ff: FeedForward::new(width, ff, vb.pp("ff"))?,
            modulation: zero_linear(width, 6 * width, vb.pp("modulation"))?,
        })
    }

    /// `x`: (batch, tokens, width); `c`: (batch, width).
    pub fn forward(&self, x: &Tensor, c: &Tensor) -> Result<Tensor> {
        let m = self.modulation.forward(&c.silu()?)?.chunk(6, 1)?;
        let norm = Norm::plain();
        let h = modulate(&norm.forward(x)?, &m[0], &m[1])?;
        let x = (x + self.attn.forward(&h, false)?.broadcast_mul(&m[2].unsqueeze(1)?)?)?;
        let h = modulate(&norm.forward(&x)?, &m[3], &m[4])?;
        Ok((&x + self.ff.forward(&h)?.broadcast_mul(&m[5].unsqueeze(1)?)?)?)
    }
}

/// Final projection of a modulated token stream.
#[derive(Debug, Clone)]
pub struct DitHead {
    modulation: Linear,
    out: Linear,
}

impl DitHead {
    pub fn new(width: usize, out: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            modulation: zero_linear(width, 2 * width, vb.pp("modulation"))?,
            out: zero_linear(width, out, vb.pp("out"))?,
        })
    }

    pub fn forward(&self, x: &Tensor, c: &Tensor) -> Result<Tensor> {
        let m = self.modulation.forward(&c.silu()?)?.chunk(2, 1)?;
        let h = modulate(&Norm::plain().forward(x)?, &m[0], &m[1])?;
        Ok(self.out.forward(&h)?)
    }
}

/// Repeat each token `rate` times along the token axis.
pub fn repeat_tokens(x: &Tensor, rate: usize) -> Result<Tensor> {
    let (b, n, w) = x.dims3()?;
    Ok(x.unsqueeze(2)?.broadcast_as((b, n, rate, w))?.reshape((b, n * rate, w))?)
}

/// Mean over consecutive groups of `rate` tokens.
pub fn pool_tokens(x: &Tensor, rate: usize) -> Result<Tensor> {
    let (b, t, w) = x.dims3()?;
    Ok(x.reshape((b, t / rate, rate, w))?.mean(2)?)
}

/// Concatenate consecutive groups of `rate` tokens along the feature axis.
pub fn group_tokens(x: &Tensor, rate: usize) -> Result<Tensor> {
    let (b, t, w) = x.dims3()?;
    Ok(x.reshape((b, t / rate, rate * w))?)
}
