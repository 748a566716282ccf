//! Transformer VQ-VAE over the rotations of one body part.

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::{linear, Init, Linear, VarBuilder};
use serde::{Deserialize, Serialize};
use stratavatar_core::kinematics::{L_WRIST, NUM_JOINTS, R_WRIST, ROT6D_DIM};
use stratavatar_core::{BodyPartition, KinematicTree, LatentPart, Part};

use crate::geometry::{mean_distance, smooth_l1, TensorSkeleton};
use crate::layers::{group_tokens, repeat_tokens, TransformerStack};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VqVaeConfig {
    pub width: usize,
    pub heads: usize,
    pub ff: usize,
    pub layers: usize,
    pub latent_dim: usize,
    pub codebook_size: usize,
    /// Temporal downsampling rate (frames per token).
    pub rate: usize,
    /// Longest window the positional embeddings cover.
    pub window: usize,
    pub beta_commit: f64,
    pub hand_weight: f64,
    /// Optimiser steps trained without quantization before the codebook is
    /// seeded from encoder outputs.
    pub codebook_warmup: usize,
}

impl Default for VqVaeConfig {
    fn default() -> Self {
        Self {
            width: 384,
            heads: 4,
            ff: 256,
            layers: 4,
            latent_dim: 384,
            codebook_size: 512,
            rate: 2,
            window: 20,
            beta_commit: 0.25,
            hand_weight: 1.0,
            codebook_warmup: 0,
        }
    }
}

/// Joints (global indices, root first) covered by a latent part.
pub fn part_joints(part: LatentPart, partition: &BodyPartition) -> Vec<usize> {
    match part {
        LatentPart::Upper => partition.joints(Part::Upper).to_vec(),
        LatentPart::Lower => partition.joints(Part::Lower).to_vec(),
        LatentPart::Full => (0..NUM_JOINTS).collect(),
    }
}

/// Rotation features of the body part, `(..., 6·J_part)`, gathered from full poses `(..., 132)`.
pub fn gather_part(full: &Tensor, joints: &[usize]) -> Result<Tensor> {
    let cols: Vec<u32> = joints.iter().flat_map(|&j| (0..ROT6D_DIM).map(move |k| (j * ROT6D_DIM + k) as u32)).collect();
    let idx = Tensor::new(cols, full.device())?;
    Ok(full.index_select(&idx, full.rank() - 1)?)
}

/// Flattened identity rotations for `joints` joints.
pub fn identity_rot6d(joints: usize, dtype: DType, dev: &Device) -> Result<Tensor> {
    let v: Vec<f64> = (0..joints).flat_map(|_| [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).collect();
    Ok(Tensor::new(v, dev)?.to_dtype(dtype)?)
}

/// Forward value `z`, gradient routed to `h`.
pub fn straight_through(h: &Tensor, z: &Tensor) -> Result<Tensor> {
    Ok((h + (z - h)?.detach())?)
}

#[derive(Debug, Clone)]
pub struct VqLoss {
    pub rec: Tensor,
    pub fk: Tensor,
    pub hand: Tensor,
    pub codebook: Tensor,
    pub commit: Tensor,
    pub total: Tensor,
}

/// Reconstruction (Smooth-L1), FK-position, hand-position, codebook and
/// commitment terms. `hands` are local joint indices of the wrists.
#[allow(clippy::too_many_arguments)]
pub fn vq_loss(
    pred: &Tensor,
    target: &Tensor,
    h: &Tensor,
    z: &Tensor,
    beta_commit: f64,
    hand_weight: f64,
    skeleton: &TensorSkeleton,
    hands: &[usize],
) -> Result<VqLoss> {
    let rec = smooth_l1(pred, target)?;
    let pp = skeleton.positions(pred)?;
    let pt = skeleton.positions(target)?;
    let fk = mean_distance(&pp, &pt)?;
    let hand = if hands.is_empty() || hand_weight == 0.0 {
        fk.zeros_like()?
    } else {
        let idx = Tensor::new(hands.iter().map(|&i| i as u32).collect::<Vec<_>>(), pred.device())?;
        let r = pp.rank() - 2;
        (mean_distance(&pp.index_select(&idx, r)?, &pt.index_select(&idx, r)?)? * hand_weight)?
    };
    let codebook = (z.detach() - h)?.sqr()?.mean_all()?;
    let commit = ((z - h.detach())?.sqr()?.mean_all()? * beta_commit)?;
    let total = ((((&rec + &fk)? + &hand)? + &codebook)? + &commit)?;
    Ok(VqLoss { rec, fk, hand, codebook, commit, total })
}

#[derive(Debug, Clone)]
pub struct VqForward {
    pub recon: Tensor,
    pub h: Tensor,
    pub z: Tensor,
    pub indices: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct VqVae {
    pub config: VqVaeConfig,
    pub part: LatentPart,
    joints: Vec<usize>,
    skeleton: TensorSkeleton,
    hands: Vec<usize>,
    in_proj: Linear,
    enc_pos: Tensor,
    encoder: TransformerStack,
    down: Linear,
    codebook: Tensor,
    up: Linear,
    dec_pos: Tensor,
    decoder: TransformerStack,
    out: Linear,
    rest: Tensor,
}

impl VqVae {
    pub fn new(config: VqVaeConfig, part: LatentPart, tree: &KinematicTree<f64>, partition: &BodyPartition, vb: VarBuilder) -> Result<Self> {
        let joints = part_joints(part, partition);
        let sub = tree.subtree(&joints)?;
        let skeleton = TensorSkeleton::new(&sub, vb.dtype(), vb.device())?;
        let hands = joints.iter().enumerate().filter(|(_, &j)| j == L_WRIST || j == R_WRIST).map(|(i, _)| i).collect();
        let c = &config;
        let io = joints.len() * ROT6D_DIM;
        let pos_init = Init::Randn { mean: 0.0, stdev: 0.02 };
        let codebook_init = Init::Randn { mean: 0.0, stdev: 1.0 };
        Ok(Self {
            in_proj: linear(io, c.width, vb.pp("enc.in"))?,
            enc_pos: vb.get_with_hints((c.window, c.width), "enc.pos", pos_init)?,
            encoder: TransformerStack::new(c.width, c.heads, c.ff, c.layers, vb.pp("enc.stack"))?,
            down: linear(c.rate * c.width, c.latent_dim, vb.pp("enc.down"))?,
            codebook: vb.get_with_hints((c.codebook_size, c.latent_dim), "codebook", codebook_init)?,
            up: linear(c.latent_dim, c.width, vb.pp("dec.in"))?,
            dec_pos: vb.get_with_hints((c.window, c.width), "dec.pos", pos_init)?,
            decoder: TransformerStack::new(c.width, c.heads, c.ff, c.layers, vb.pp("dec.stack"))?,
            out: linear(c.width, io, vb.pp("dec.out"))?,
            rest: identity_rot6d(joints.len(), vb.dtype(), vb.device())?,
            config,
            part,
            joints,
            skeleton,
            hands,
        })
    }

    pub fn joints(&self) -> &[usize] {
        &self.joints
    }

    pub fn skeleton(&self) -> &TensorSkeleton {
        &self.skeleton
    }

    pub fn hands(&self) -> &[usize] {
        &self.hands
    }

    pub fn codebook(&self) -> &Tensor {
        &self.codebook
    }

    fn check_frames(&self, t: usize) -> Result<()> {
        if t == 0 || !t.is_multiple_of(self.config.rate) {
            return Err(Error::BadLength { frames: t, rate: self.config.rate });
        }
        if t > self.config.window {
            return Err(Error::ShapeMismatch(format!("{t} frames exceed window {}", self.config.window)));
        }
        Ok(())
    }

    /// Continuous latents `(B, T/l, D)` from part rotations `(B, T, 6·J)`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let (_, t, w) = x.dims3()?;
        self.check_frames(t)?;
        if w != self.joints.len() * ROT6D_DIM {
            return Err(Error::ShapeMismatch(format!("expected {} features, got {w}", self.joints.len() * ROT6D_DIM)));
        }
        let e = self.in_proj.forward(x)?.broadcast_add(&self.enc_pos.narrow(0, 0, t)?)?;
        let e = self.encoder.forward(&e, false)?;
        Ok(self.down.forward(&group_tokens(&e, self.config.rate)?)?)
    }

    /// Nearest codebook entries `(B, n, D)` and their indices; ties go to the lowest index.
    pub fn quantize(&self, h: &Tensor) -> Result<(Tensor, Vec<u32>)> {
        let (b, n, d) = h.dims3()?;
        let flat = h.reshape((b * n, d))?;
        let cb = self.codebook.detach();
        let dist = flat
            .sqr()?
            .sum_keepdim(1)?
            .broadcast_sub(&(flat.matmul(&cb.t()?)? * 2.0)?)?
            .broadcast_add(&cb.sqr()?.sum(1)?.unsqueeze(0)?)?;
        let idx = dist.argmin(1)?;
        let z = self.codebook.index_select(&idx, 0)?.reshape((b, n, d))?;
        Ok((z, idx.to_vec1::<u32>()?))
    }

    /// Part rotations `(B, l·n, 6·J)` from latents `(B, n, D)`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let (_, n, _) = z.dims3()?;
        let t = n * self.config.rate;
        self.check_frames(t)?;
        let e = repeat_tokens(&self.up.forward(z)?, self.config.rate)?.broadcast_add(&self.dec_pos.narrow(0, 0, t)?)?;
        let e = self.decoder.forward(&e, false)?;
        Ok(self.out.forward(&e)?.broadcast_add(&self.rest)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<VqForward> {
        let h = self.encode(x)?;
        let (z, indices) = self.quantize(&h)?;
        let recon = self.decode(&straight_through(&h, &z)?)?;
        Ok(VqForward { recon, h, z, indices })
    }

    /// Loss with the quantizer bypassed (codebook and commitment terms are zero).
    pub fn continuous_loss(&self, x: &Tensor) -> Result<VqLoss> {
        let h = self.encode(x)?;
        let recon = self.decode(&h)?;
        vq_loss(&recon, x, &h, &h.detach(), self.config.beta_commit, self.config.hand_weight, &self.skeleton, &self.hands)
    }

    pub fn loss(&self, x: &Tensor) -> Result<(VqLoss, Vec<u32>)> {
        let f = self.forward(x)?;
        let l = vq_loss(&f.recon, x, &f.h, &f.z, self.config.beta_commit, self.config.hand_weight, &self.skeleton, &self.hands)?;
        Ok((l, f.indices))
    }

    /// Quantized latents for part rotations.
    pub fn latents(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.quantize(&self.encode(x)?)?.0)
    }
}

/// Squared distance of each `(n, D)` row of `h` to its nearest codebook row,
/// returned for diagnostics.
pub fn nearest_distance(h: &Tensor, codebook: &Tensor) -> Result<Tensor> {
    let dist = h
        .sqr()?
        .sum_keepdim(D::Minus1)?
        .broadcast_sub(&(h.matmul(&codebook.t()?)? * 2.0)?)?
        .broadcast_add(&codebook.sqr()?.sum(1)?.unsqueeze(0)?)?;
    Ok(dist.min(D::Minus1)?)
}

pub struct TrainedVqVae {
    pub model: VqVae,
    pub store: std::sync::Arc<crate::init::SeededVarMap>,
    pub log: crate::train::TrainLog,
}

/// Train a part VQ-VAE on full-pose windows `(count, T, 132)`.
#[allow(clippy::too_many_arguments)]
pub fn train_vqvae(
    windows: &Tensor,
    part: LatentPart,
    config: &VqVaeConfig,
    train: &crate::train::TrainConfig,
    tree: &KinematicTree<f64>,
    partition: &BodyPartition,
    seed: u64,
) -> Result<TrainedVqVae> {
    use rand::{Rng, SeedableRng};
    use std::cell::RefCell;
    use std::collections::BTreeSet;

    let (store, vb) = crate::init::seeded_builder(seed, windows.dtype(), windows.device());
    let model = VqVae::new(config.clone(), part, tree, partition, vb)?;
    let data = gather_part(windows, model.joints())?.contiguous()?;
    let n = data.dim(0)?;
    if n == 0 {
        return Err(Error::ShapeMismatch("no training windows".into()));
    }

    // Seed the codebook with encoder outputs of randomly chosen tokens.
    let codebook_var = store.sorted_vars().into_iter().find(|(k, _)| k == "codebook").map(|(_, v)| v).expect("codebook var");
    let seed_codebook = || -> Result<()> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xc0de);
        let probe: Vec<usize> = (0..n.min(256)).map(|_| rng.random_range(0..n)).collect();
        let h = model.encode(&crate::data::select(&data, &probe)?)?.detach();
        let flat = h.reshape(((), config.latent_dim))?;
        let rows = flat.dim(0)?;
        let picks: Vec<usize> = (0..config.codebook_size).map(|_| rng.random_range(0..rows)).collect();
        let init = crate::data::select(&flat, &picks)?;
        let noise: Vec<f64> = (0..init.elem_count()).map(|_| rng.random_range(-1e-3..1e-3)).collect();
        let jitter = Tensor::from_vec(noise, init.shape(), init.device())?.to_dtype(init.dtype())?;
        codebook_var.set(&(init + jitter)?)?;
        Ok(())
    };
    if config.codebook_warmup == 0 {
        seed_codebook()?;
    }
    let step = std::cell::Cell::new(0usize);

    let used = RefCell::new(BTreeSet::new());
    let vars = store.sorted_vars().into_iter().map(|(_, v)| v).collect();
    let mut hook = |_epoch: usize| -> Result<Option<String>> {
        let mut u = used.borrow_mut();
        let note = format!("codebook usage {}/{}", u.len(), config.codebook_size);
        u.clear();
        Ok(Some(note))
    };
    let log = crate::train::fit(
        vars,
        n,
        train,
        seed,
        |batch, _| {
            let x = crate::data::select(&data, batch)?;
            let s = step.get();
            step.set(s + 1);
            if s < config.codebook_warmup {
                return Ok(model.continuous_loss(&x)?.total);
            }
            if s == config.codebook_warmup && s > 0 {
                seed_codebook()?;
            }
            let (l, idx) = model.loss(&x)?;
            used.borrow_mut().extend(idx);
            Ok(l.total)
        },
        Some(&mut hook),
    )?;
    Ok(TrainedVqVae { model, store, log })
}
