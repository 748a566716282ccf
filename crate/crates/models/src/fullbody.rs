//! Full-body decoder over concatenated part latents, and the recurrent
//! refiner that adds a residual to the decoded rotations.

use candle_core::{Module, Tensor};
use candle_nn::rnn::{GRUConfig, RNN, GRU};
use candle_nn::{linear, Init, Linear, VarBuilder};
use serde::{Deserialize, Serialize};
use stratavatar_core::kinematics::{L_WRIST, NUM_JOINTS, POSE_DIM, R_WRIST};
use stratavatar_core::KinematicTree;

use crate::geometry::{jitter_loss, mean_distance, mse, velocity_loss, TensorSkeleton};
use crate::layers::{repeat_tokens, zero_linear, TransformerStack};
use crate::vqvae::identity_rot6d;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub width: usize,
    pub heads: usize,
    pub ff: usize,
    pub layers: usize,
    /// Width of each latent stream, concatenated token-wise.
    pub latent_dims: Vec<usize>,
    pub rate: usize,
    pub window: usize,
    pub hand_weight: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { width: 512, heads: 8, ff: 1024, layers: 6, latent_dims: vec![384, 384], rate: 2, window: 20, hand_weight: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct FullBodyDecoder {
    pub config: DecoderConfig,
    input: Linear,
    pos: Tensor,
    stack: TransformerStack,
    out: Linear,
    rest: Tensor,
}

impl FullBodyDecoder {
    pub fn new(config: DecoderConfig, vb: VarBuilder) -> Result<Self> {
        let c = &config;
        let d: usize = c.latent_dims.iter().sum();
        Ok(Self {
            input: linear(d, c.width, vb.pp("input"))?,
            pos: vb.get_with_hints((c.window, c.width), "pos", Init::Randn { mean: 0.0, stdev: 0.02 })?,
            stack: TransformerStack::new(c.width, c.heads, c.ff, c.layers, vb.pp("stack"))?,
            out: linear(c.width, POSE_DIM, vb.pp("out"))?,
            rest: identity_rot6d(NUM_JOINTS, vb.dtype(), vb.device())?,
            config,
        })
    }

    /// Full-body rotations `(B, l·n, 132)` from latent streams `(B, n, D_i)`.
    pub fn decode(&self, latents: &[Tensor]) -> Result<Tensor> {
        if latents.len() != self.config.latent_dims.len() {
            return Err(Error::ShapeMismatch(format!("expected {} latent streams, got {}", self.config.latent_dims.len(), latents.len())));
        }
        let (b, n, _) = latents[0].dims3()?;
        for (z, &d) in latents.iter().zip(&self.config.latent_dims) {
            if z.dims() != [b, n, d] {
                return Err(Error::ShapeMismatch(format!("latent {:?} does not match ({b}, {n}, {d})", z.dims())));
            }
        }
        let t = n * self.config.rate;
        if t > self.config.window {
            return Err(Error::ShapeMismatch(format!("{t} frames exceed window {}", self.config.window)));
        }
        let x = self.input.forward(&Tensor::cat(latents, 2)?)?;
        let x = repeat_tokens(&x, self.config.rate)?.broadcast_add(&self.pos.narrow(0, 0, t)?)?;
        let x = self.stack.forward(&x, false)?;
        Ok(self.out.forward(&x)?.broadcast_add(&self.rest)?)
    }
}

#[derive(Debug, Clone)]
pub struct DecoderLoss {
    pub rec: Tensor,
    pub fk: Tensor,
    pub hand: Tensor,
    pub total: Tensor,
}

/// Rotation L2 + FK position + wrist position terms on full-body rotations.
pub fn decoder_loss(pred: &Tensor, target: &Tensor, skeleton: &TensorSkeleton, hand_weight: f64) -> Result<DecoderLoss> {
    let rec = mse(pred, target)?;
    let pp = skeleton.positions(pred)?;
    let pt = skeleton.positions(target)?;
    let fk = mean_distance(&pp, &pt)?;
    let idx = Tensor::new(&[L_WRIST as u32, R_WRIST as u32], pred.device())?;
    let r = pp.rank() - 2;
    let hand = (mean_distance(&pp.index_select(&idx, r)?, &pt.index_select(&idx, r)?)? * hand_weight)?;
    let total = ((&rec + &fk)? + &hand)?;
    Ok(DecoderLoss { rec, fk, hand, total })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinerConfig {
    pub hidden: usize,
    pub layers: usize,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self { hidden: 512, layers: 2 }
    }
}

#[derive(Debug, Clone)]
pub struct Refiner {
    pub config: RefinerConfig,
    grus: Vec<GRU>,
    out: Linear,
}

impl Refiner {
    pub fn new(config: RefinerConfig, vb: VarBuilder) -> Result<Self> {
        let mut grus = Vec::new();
        for i in 0..config.layers {
            let input = if i == 0 { POSE_DIM } else { config.hidden };
            grus.push(candle_nn::rnn::gru(input, config.hidden, GRUConfig::default(), vb.pp(format!("gru{i}")))?);
        }
        Ok(Self { out: zero_linear(config.hidden, POSE_DIM, vb.pp("out"))?, grus, config })
    }

    /// Raw residual `(B, N, 132)` for decoded rotations `(B, N, 132)`.
    pub fn residual(&self, x: &Tensor) -> Result<Tensor> {
        let (_, n, _) = x.dims3()?;
        if n == 0 {
            return Err(Error::ShapeMismatch("empty sequence".into()));
        }
        let mut h = x.clone();
        for g in &self.grus {
            let states = g.seq(&h)?;
            h = Tensor::stack(&states.iter().map(|s| s.h().clone()).collect::<Vec<_>>(), 1)?;
        }
        Ok(self.out.forward(&h)?)
    }

    pub fn refine(&self, x: &Tensor) -> Result<Tensor> {
        Ok((x + self.residual(x)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinerWeights {
    pub rec: f64,
    pub vel: f64,
    pub fk: f64,
    pub jitter: f64,
}

impl Default for RefinerWeights {
    fn default() -> Self {
        Self { rec: 0.01, vel: 10.0, fk: 0.05, jitter: 0.01 }
    }
}

/// Weighted terms of the refiner objective; each field already includes its weight.
#[derive(Debug, Clone)]
pub struct RefinerLoss {
    pub rec: Tensor,
    pub vel: Tensor,
    pub fk: Tensor,
    pub jitter: Tensor,
    pub total: Tensor,
}

/// Refiner objective on rotation sequences `(B, N, 132)`. The jitter term
/// needs four frames and is zero for shorter sequences.
pub fn refiner_loss(pred: &Tensor, target: &Tensor, skeleton: &TensorSkeleton, fps: f64, w: &RefinerWeights) -> Result<RefinerLoss> {
    let rec = (mse(pred, target)? * w.rec)?;
    let pp = skeleton.positions(pred)?;
    let pt = skeleton.positions(target)?;
    let vel = (velocity_loss(&pp, &pt)? * w.vel)?;
    let fk = (mean_distance(&pp, &pt)? * w.fk)?;
    let jitter = if pp.dim(1)? >= 4 { (jitter_loss(&pp, fps)? * w.jitter)? } else { rec.zeros_like()? };
    let total = (((&rec + &vel)? + &fk)? + &jitter)?;
    Ok(RefinerLoss { rec, vel, fk, jitter, total })
}

pub struct Trained<M> {
    pub model: M,
    pub store: std::sync::Arc<crate::init::SeededVarMap>,
    pub log: crate::train::TrainLog,
}

/// Fit the decoder on latent streams `(count, n, D_i)` against full-body targets `(count, T, 132)`.
pub fn train_decoder(
    config: &DecoderConfig,
    latents: &[Tensor],
    targets: &Tensor,
    tree: &KinematicTree<f64>,
    train: &crate::train::TrainConfig,
    seed: u64,
) -> Result<Trained<FullBodyDecoder>> {
    let (store, vb) = crate::init::seeded_builder(seed, targets.dtype(), targets.device());
    let model = FullBodyDecoder::new(config.clone(), vb)?;
    let latents: Vec<Tensor> = latents.iter().map(|l| l.detach().contiguous()).collect::<candle_core::Result<_>>()?;
    let targets = &targets.contiguous()?;
    let skeleton = TensorSkeleton::new(tree, targets.dtype(), targets.device())?;
    let vars = store.sorted_vars().into_iter().map(|(_, v)| v).collect();
    let log = crate::train::fit(
        vars,
        targets.dim(0)?,
        train,
        seed,
        |batch, _| {
            let z: Vec<Tensor> = latents.iter().map(|l| crate::data::select(l, batch)).collect::<Result<_>>()?;
            let pred = model.decode(&z)?;
            Ok(decoder_loss(&pred, &crate::data::select(targets, batch)?, &skeleton, config.hand_weight)?.total)
        },
        None,
    )?;
    Ok(Trained { model, store, log })
}

/// Fit the refiner on decoded chunks `(count, N, 132)` against ground-truth chunks.
#[allow(clippy::too_many_arguments)]
pub fn train_refiner(
    config: &RefinerConfig,
    decoded: &Tensor,
    targets: &Tensor,
    tree: &KinematicTree<f64>,
    fps: f64,
    weights: &RefinerWeights,
    train: &crate::train::TrainConfig,
    seed: u64,
) -> Result<Trained<Refiner>> {
    let (store, vb) = crate::init::seeded_builder(seed, targets.dtype(), targets.device());
    let model = Refiner::new(config.clone(), vb)?;
    let decoded = &decoded.detach().contiguous()?;
    let targets = &targets.contiguous()?;
    let skeleton = TensorSkeleton::new(tree, targets.dtype(), targets.device())?;
    let vars = store.sorted_vars().into_iter().map(|(_, v)| v).collect();
    let log = crate::train::fit(
        vars,
        targets.dim(0)?,
        train,
        seed,
        |batch, _| {
            let pred = model.refine(&crate::data::select(decoded, batch)?)?;
            Ok(refiner_loss(&pred, &crate::data::select(targets, batch)?, &skeleton, fps, weights)?.total)
        },
        None,
    )?;
    Ok(Trained { model, store, log })
}
