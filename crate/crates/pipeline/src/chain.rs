//! The trained model chain and sliding-window inference.

use std::time::{Duration, Instant};

use candle_core::{DType, Device, IndexOp, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stratavatar_core::kinematics::{HEAD, NUM_JOINTS};
use stratavatar_core::placement::root_translation_for_head;
use stratavatar_core::{BodyPartition, KinematicTree, LatentPart, MotionSequence, Pose, Rotation6D, SparseObservation, Vec3};
use stratavatar_models::diffusion::{gaussian, sample_latents, stratified_sample};
use stratavatar_models::vqvae::part_joints;
use stratavatar_models::{DenoiserModel, FullBodyDecoder, Refiner, VqVae};

use crate::corpus::{online_window, online_windows};
use crate::error::{Error, Result};

/// Windows per forward pass in batched inference.
const CHUNK: usize = 256;

#[allow(clippy::large_enum_variant)]
pub enum Denoisers {
    Stratified { upper: DenoiserModel, lower: DenoiserModel, parallel: bool },
    Unified(DenoiserModel),
}

impl Denoisers {
    pub fn models(&self) -> Vec<&DenoiserModel> {
        match self {
            Self::Stratified { upper, lower, .. } => vec![upper, lower],
            Self::Unified(m) => vec![m],
        }
    }

    /// Latents for observation windows `(B, T, F)` given one noise tensor per model.
    pub fn sample(&self, obs: &Tensor, noise: &[Tensor], steps: usize) -> Result<Vec<Tensor>> {
        Ok(match self {
            Self::Stratified { upper, lower, parallel } => {
                let (u, l) = stratified_sample(upper, lower, obs, steps, (noise[0].clone(), noise[1].clone()), *parallel)?;
                vec![u, l]
            }
            Self::Unified(m) => vec![sample_latents(m, &m.normalize_obs(obs)?, None, noise[0].clone(), steps)?],
        })
    }

    /// Independent noise for `batch` windows.
    pub fn noise(&self, rng: &mut ChaCha8Rng, batch: usize) -> Result<Vec<Tensor>> {
        self.models()
            .iter()
            .map(|m| {
                let n = m.config.window / m.config.rate;
                Ok(gaussian(rng, &[batch, n, m.config.latent_dim], DType::F32, &Device::Cpu)?)
            })
            .collect()
    }
}

/// How latents become rotations.
#[allow(clippy::large_enum_variant)]
pub enum Decoding {
    FullBody(FullBodyDecoder),
    /// Each part's own VQ-VAE decoder; the pelvis comes from the upper part.
    Parts { upper: VqVae, lower: VqVae, columns: Vec<(usize, usize)> },
}

impl Decoding {
    pub fn parts(upper: VqVae, lower: VqVae, partition: &BodyPartition) -> Self {
        let up = part_joints(LatentPart::Upper, partition);
        let low = part_joints(LatentPart::Lower, partition);
        let columns = (0..NUM_JOINTS)
            .map(|j| match up.iter().position(|&u| u == j) {
                Some(i) => (0, i),
                None => (1, low.iter().position(|&l| l == j).expect("partition covers the skeleton")),
            })
            .collect();
        Self::Parts { upper, lower, columns }
    }

    pub fn decode(&self, latents: &[Tensor]) -> Result<Tensor> {
        match self {
            Self::FullBody(d) => Ok(d.decode(latents)?),
            Self::Parts { upper, lower, columns } => {
                let parts = [upper.decode(&latents[0])?, lower.decode(&latents[1])?];
                let cols: Vec<Tensor> =
                    columns.iter().map(|&(p, i)| parts[p].narrow(2, 6 * i, 6)).collect::<candle_core::Result<_>>()?;
                Ok(Tensor::cat(&cols, 2)?)
            }
        }
    }
}

/// Rotations with and without the refiner, placed by the observed head.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub refined: MotionSequence<f64>,
    pub unrefined: MotionSequence<f64>,
}

#[derive(Debug, Clone)]
pub struct OnlineOutput {
    pub motion: MotionSequence<f64>,
    pub latency: Vec<Duration>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LatencyStats {
    pub frames: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    pub fn from_durations(d: &[Duration]) -> Self {
        let mut ms: Vec<f64> = d.iter().map(|x| x.as_secs_f64() * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        let at = |q: f64| ms.get(((ms.len() as f64 - 1.0) * q).round() as usize).copied().unwrap_or(0.0);
        Self {
            frames: ms.len(),
            mean_ms: if ms.is_empty() { 0.0 } else { ms.iter().sum::<f64>() / ms.len() as f64 },
            median_ms: at(0.5),
            p95_ms: at(0.95),
            max_ms: ms.last().copied().unwrap_or(0.0),
        }
    }
}

pub struct Chain {
    pub denoisers: Denoisers,
    pub decoding: Decoding,
    pub refiner: Option<Refiner>,
    pub tree: KinematicTree<f64>,
    pub window: usize,
    pub sample_steps: usize,
}

impl Chain {
    /// One noise draw per model, reused by every window of a session.
    pub fn session_noise(&self, seed: u64) -> Result<Vec<Tensor>> {
        self.denoisers.noise(&mut ChaCha8Rng::seed_from_u64(seed), 1)
    }

    fn decode_windows(&self, obs: &Tensor, noise: &[Tensor]) -> Result<Tensor> {
        let b = obs.dim(0)?;
        let noise: Vec<Tensor> =
            noise.iter().map(|n| n.broadcast_as((b, n.dim(1)?, n.dim(2)?))?.contiguous()).collect::<candle_core::Result<_>>()?;
        self.decoding.decode(&self.denoisers.sample(obs, &noise, self.sample_steps)?)
    }

    /// Decoded frame `t` of the window ending at `t`, for every `t`; `(N, 132)`.
    pub fn decoded_stream(&self, obs: &SparseObservation<f64>, seed: u64) -> Result<Tensor> {
        let noise = self.session_noise(seed)?;
        let mut out = Vec::new();
        for start in (0..obs.len()).step_by(CHUNK) {
            let end = (start + CHUNK).min(obs.len());
            let w = online_windows(obs, start, end, self.window, &Device::Cpu)?;
            let dec = self.decode_windows(&w, &noise)?;
            out.push(dec.i((.., self.window - 1, ..))?);
        }
        Ok(Tensor::cat(&out, 0)?)
    }

    /// Refiner buffers: for each frame the last `window` stream frames, front-padded with frame 0.
    pub fn stream_buffers(stream: &Tensor, window: usize) -> Result<Tensor> {
        let n = stream.dim(0)?;
        let idx: Vec<u32> = (0..n).flat_map(|t| (0..window).map(move |k| (t + k).saturating_sub(window - 1) as u32)).collect();
        let idx = Tensor::from_vec(idx, n * window, stream.device())?;
        Ok(stream.contiguous()?.index_select(&idx, 0)?.reshape((n, window, stream.dim(1)?))?)
    }

    /// Refined stream `(N, 132)`; the identity when no refiner is loaded.
    pub fn refine_stream(&self, stream: &Tensor) -> Result<Tensor> {
        let Some(refiner) = &self.refiner else {
            return Ok(stream.clone());
        };
        let buffers = Self::stream_buffers(stream, self.window)?;
        let mut out = Vec::new();
        for start in (0..buffers.dim(0)?).step_by(CHUNK) {
            let len = CHUNK.min(buffers.dim(0)? - start);
            let r = refiner.refine(&buffers.narrow(0, start, len)?)?;
            out.push(r.i((.., self.window - 1, ..))?);
        }
        Ok(Tensor::cat(&out, 0)?)
    }

    /// Whole-sequence inference, batched over frames. Every frame follows the
    /// same window, noise and buffer rules as [`Chain::infer_online`].
    pub fn infer(&self, obs: &SparseObservation<f64>, seed: u64) -> Result<Prediction> {
        if obs.is_empty() {
            return Err(Error::Core(stratavatar_core::Error::TooShort { needed: 1, got: 0 }));
        }
        let stream = self.decoded_stream(obs, seed)?;
        let refined = self.refine_stream(&stream)?;
        Ok(Prediction { refined: self.place(&refined, obs)?, unrefined: self.place(&stream, obs)? })
    }

    /// Frame-by-frame inference: each output pose uses only observations up to its frame.
    pub fn infer_online(&self, obs: &SparseObservation<f64>, seed: u64) -> Result<OnlineOutput> {
        let noise = self.session_noise(seed)?;
        let mut decoded: Vec<Tensor> = Vec::new();
        let mut poses = Vec::with_capacity(obs.len());
        let mut latency = Vec::with_capacity(obs.len());
        for t in 0..obs.len() {
            let start = Instant::now();
            let w = online_window(obs, t, self.window)?;
            let w: Vec<f32> = w.data().iter().map(|&v| v as f32).collect();
            let w = Tensor::from_vec(w, (1, self.window, obs.width()), &Device::Cpu)?;
            let frame = self.decode_windows(&w, &noise)?.i((.., self.window - 1, ..))?;
            decoded.push(frame);
            let row = match &self.refiner {
                None => decoded[t].clone(),
                Some(refiner) => {
                    let buf: Vec<Tensor> =
                        (0..self.window).map(|k| decoded[(t + k).saturating_sub(self.window - 1)].clone()).collect();
                    let buf = Tensor::cat(&buf, 0)?.unsqueeze(0)?;
                    refiner.refine(&buf)?.i((.., self.window - 1, ..))?
                }
            };
            let pose = pose_from_row(&row.flatten_all()?.to_vec1::<f32>()?);
            let root = root_translation_for_head(&pose, head(obs, t)?, &self.tree)?;
            poses.push(Pose::new(pose.local_rotations, root));
            latency.push(start.elapsed());
        }
        Ok(OnlineOutput { motion: MotionSequence::new(poses, obs.fps())?, latency })
    }

    fn place(&self, rows: &Tensor, obs: &SparseObservation<f64>) -> Result<MotionSequence<f64>> {
        let rows = rows.to_dtype(DType::F32)?.to_vec2::<f32>()?;
        let poses = rows
            .iter()
            .enumerate()
            .map(|(t, r)| {
                let p = pose_from_row(r);
                let root = root_translation_for_head(&p, head(obs, t)?, &self.tree)?;
                Ok(Pose::new(p.local_rotations, root))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MotionSequence::new(poses, obs.fps())?)
    }
}

fn head(obs: &SparseObservation<f64>, t: usize) -> Result<Vec3<f64>> {
    obs.position(t, HEAD).ok_or_else(|| Error::Config("the head must be tracked".into()))
}

fn pose_from_row(row: &[f32]) -> Pose<f64> {
    let rots = row.chunks(6).map(|c| Rotation6D::new(std::array::from_fn(|i| c[i] as f64))).collect();
    Pose::new(rots, Vec3::zero())
}
