//! Latent denoiser with adaptive-norm timestep conditioning, its training
//! objective and the stratified sampler.

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::{linear, Init, Linear, VarBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use stratavatar_core::schedule::{sample, Denoiser, NoiseSchedule};
use stratavatar_core::LatentPart;

use crate::geometry::mse;
use crate::layers::{pool_tokens, timestep_embedding, DitBlock, DitHead};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Predict the clean latent.
    X0,
    /// Predict the added noise.
    Epsilon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub width: usize,
    pub heads: usize,
    pub ff: usize,
    pub blocks: usize,
    pub latent_dim: usize,
    /// Width of the upper-body latent used as conditioning by the lower stage.
    pub upper_latent_dim: usize,
    pub obs_features: usize,
    pub rate: usize,
    pub window: usize,
    pub train_steps: usize,
    pub sample_steps: usize,
    pub objective: Objective,
    /// Linear-schedule endpoints kept for provenance; the cosine schedule ignores them.
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            width: 512,
            heads: 8,
            ff: 2048,
            blocks: 12,
            latent_dim: 384,
            upper_latent_dim: 384,
            obs_features: 54,
            rate: 2,
            window: 20,
            train_steps: 1000,
            sample_steps: 5,
            objective: Objective::X0,
            beta_start: 0.00085,
            beta_end: 0.012,
        }
    }
}

/// Conditioning fed to the DiT blocks: observation tokens added to the
/// latent tokens, and the timestep vector driving the adaptive norms.
#[derive(Debug, Clone)]
pub struct ConditioningBundle {
    pub obs_tokens: Tensor,
    pub time: Tensor,
}

const BUFFER_PREFIX: &str = "buffer.";

/// Whether a parameter name denotes a fixed statistic rather than a trainable weight.
pub fn is_buffer(name: &str) -> bool {
    name.starts_with(BUFFER_PREFIX)
}

#[derive(Debug, Clone)]
pub struct DenoiserModel {
    pub config: DenoiserConfig,
    pub stage: LatentPart,
    z_in: Linear,
    obs_in: Linear,
    upper_in: Option<Linear>,
    pos: Tensor,
    time1: Linear,
    time2: Linear,
    blocks: Vec<DitBlock>,
    head: DitHead,
    obs_mean: Tensor,
    obs_std: Tensor,
    latent_scale: Tensor,
    upper_scale: Tensor,
}

impl DenoiserModel {
    /// `upper_conditioned` adds the projection of the upper-body latent (lower stage, stratified mode).
    pub fn new(config: DenoiserConfig, stage: LatentPart, upper_conditioned: bool, vb: VarBuilder) -> Result<Self> {
        let c = &config;
        let w = c.width;
        let blocks = (0..c.blocks).map(|i| DitBlock::new(w, c.heads, c.ff, vb.pp(format!("block{i}")))).collect::<Result<Vec<_>>>()?;
        let upper_in = if upper_conditioned { Some(linear(c.upper_latent_dim, w, vb.pp("upper_in"))?) } else { None };
        let buf = vb.pp("buffer");
        Ok(Self {
            z_in: linear(c.latent_dim, w, vb.pp("z_in"))?,
            obs_in: linear(c.obs_features, w, vb.pp("obs_in"))?,
            upper_in,
            pos: vb.get_with_hints((c.window / c.rate, w), "pos", Init::Randn { mean: 0.0, stdev: 0.02 })?,
            time1: linear(w, w, vb.pp("time1"))?,
            time2: linear(w, w, vb.pp("time2"))?,
            blocks,
            head: DitHead::new(w, c.latent_dim, vb.pp("head"))?,
            obs_mean: buf.get_with_hints(c.obs_features, "obs_mean", Init::Const(0.0))?,
            obs_std: buf.get_with_hints(c.obs_features, "obs_std", Init::Const(1.0))?,
            latent_scale: buf.get_with_hints(1, "latent_scale", Init::Const(1.0))?,
            upper_scale: buf.get_with_hints(1, "upper_scale", Init::Const(1.0))?,
            config,
            stage,
        })
    }

    pub fn upper_conditioned(&self) -> bool {
        self.upper_in.is_some()
    }

    pub fn latent_scale(&self) -> Result<f64> {
        crate::geometry::scalar(&self.latent_scale.sum_all()?)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule<f64>> {
        Ok(NoiseSchedule::cosine(self.config.train_steps)?)
    }

    /// Standardize observation windows `(B, T, F)` with the stored statistics.
    pub fn normalize_obs(&self, obs: &Tensor) -> Result<Tensor> {
        Ok(obs.broadcast_sub(&self.obs_mean)?.broadcast_div(&self.obs_std)?)
    }

    pub fn to_model_space(&self, z: &Tensor) -> Result<Tensor> {
        Ok(z.broadcast_div(&self.latent_scale)?)
    }

    pub fn from_model_space(&self, z: &Tensor) -> Result<Tensor> {
        Ok(z.broadcast_mul(&self.latent_scale)?)
    }

    /// `obs`: normalized windows `(B, T, F)`; `upper`: upper latents `(B, T/l, D_up)` in VQ space.
    pub fn assemble_conditioning(&self, obs: &Tensor, steps: &[usize], upper: Option<&Tensor>) -> Result<ConditioningBundle> {
        let (b, t, _) = obs.dims3()?;
        if t % self.config.rate != 0 || t > self.config.window {
            return Err(stratavatar_core::Error::LengthMismatch(format!(
                "observation window of {t} frames does not fit rate {} and window {}",
                self.config.rate, self.config.window
            ))
            .into());
        }
        if steps.len() != b {
            return Err(Error::ShapeMismatch(format!("{} steps for batch {b}", steps.len())));
        }
        let mut tokens = pool_tokens(&self.obs_in.forward(obs)?, self.config.rate)?;
        if let (Some(proj), Some(u)) = (&self.upper_in, upper) {
            if u.dim(1)? != tokens.dim(1)? {
                return Err(stratavatar_core::Error::LengthMismatch("upper latent token count".into()).into());
            }
            tokens = (tokens + proj.forward(&u.broadcast_div(&self.upper_scale)?)?)?;
        }
        let emb = timestep_embedding(steps, self.config.width, obs.dtype(), obs.device())?;
        let time = self.time2.forward(&self.time1.forward(&emb)?.silu()?)?;
        Ok(ConditioningBundle { obs_tokens: tokens, time })
    }

    /// Raw network output (clean latent or noise, per objective) for model-space `z`.
    pub fn forward(&self, z: &Tensor, cond: &ConditioningBundle) -> Result<Tensor> {
        let n = z.dim(1)?;
        if n != cond.obs_tokens.dim(1)? {
            return Err(stratavatar_core::Error::LengthMismatch("latent and conditioning token counts differ".into()).into());
        }
        let mut x = (self.z_in.forward(z)? + &cond.obs_tokens)?.broadcast_add(&self.pos.narrow(0, 0, n)?)?;
        for b in &self.blocks {
            x = b.forward(&x, &cond.time)?;
        }
        self.head.forward(&x, &cond.time)
    }

    /// Training loss on model-space clean latents `z0` with per-sample steps and noise.
    pub fn loss(&self, z0: &Tensor, obs: &Tensor, upper: Option<&Tensor>, steps: &[usize], noise: &Tensor) -> Result<Tensor> {
        let sched = self.schedule()?;
        let coef = |f: &dyn Fn(usize) -> f64| -> Result<Tensor> {
            let v: Vec<f64> = steps.iter().map(|&k| f(k)).collect();
            Ok(Tensor::from_vec(v, (steps.len(), 1, 1), z0.device())?.to_dtype(z0.dtype())?)
        };
        let a = coef(&|k| sched.coefficients(k).0)?;
        let s = coef(&|k| sched.coefficients(k).1)?;
        let zk = (z0.broadcast_mul(&a)? + noise.broadcast_mul(&s)?)?;
        let cond = self.assemble_conditioning(obs, steps, upper)?;
        let out = self.forward(&zk, &cond)?;
        match self.config.objective {
            Objective::X0 => mse(&out, z0),
            Objective::Epsilon => mse(&out, noise),
        }
    }
}

/// Standard-normal tensor drawn from a seeded generator.
pub fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize], dtype: DType, dev: &Device) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(v, shape, dev)?.to_dtype(dtype)?)
}

/// Adapter running a trained model inside the generic sampler.
struct Sampling<'a> {
    model: &'a DenoiserModel,
    schedule: NoiseSchedule<f64>,
    obs: &'a Tensor,
    upper: Option<&'a Tensor>,
}

impl Denoiser for Sampling<'_> {
    type Latent = Tensor;
    type Error = Error;

    fn predict_x0(&mut self, z: &Tensor, step: usize) -> Result<Tensor> {
        let b = z.dim(0)?;
        let cond = self.model.assemble_conditioning(self.obs, &vec![step; b], self.upper)?;
        let out = self.model.forward(z, &cond)?;
        match self.model.config.objective {
            Objective::X0 => Ok(out),
            Objective::Epsilon => {
                let (a, s) = self.schedule.coefficients(step);
                Ok(((z - (out * s)?)? / a)?)
            }
        }
    }

    fn combine(&self, a: f64, x: &Tensor, b: f64, y: &Tensor) -> Result<Tensor> {
        Ok(((x * a)? + (y * b)?)?)
    }
}

/// Sample latents (VQ space) for normalized observation windows, starting from `noise` (model space).
pub fn sample_latents(model: &DenoiserModel, obs: &Tensor, upper: Option<&Tensor>, noise: Tensor, steps: usize) -> Result<Tensor> {
    let mut d = Sampling { model, schedule: model.schedule()?, obs, upper };
    let schedule = model.schedule()?;
    let z = sample(&mut d, &schedule, noise, steps)?;
    model.from_model_space(&z)
}

/// Upper then lower latents for raw (recentred, unnormalized) observation
/// windows. `parallel` drops the upper latent from the lower conditioning.
pub fn stratified_sample(
    upper: &DenoiserModel,
    lower: &DenoiserModel,
    obs: &Tensor,
    steps: usize,
    noise: (Tensor, Tensor),
    parallel: bool,
) -> Result<(Tensor, Tensor)> {
    let z_up = sample_latents(upper, &upper.normalize_obs(obs)?, None, noise.0, steps)?;
    let cond = if parallel { None } else { Some(&z_up) };
    let z_low = sample_latents(lower, &lower.normalize_obs(obs)?, cond, noise.1, steps)?;
    Ok((z_up, z_low))
}

/// Noise pair for one stratified draw of `batch` windows.
pub fn stratified_noise(seed: u64, batch: usize, upper: &DenoiserModel, lower: &DenoiserModel, dtype: DType, dev: &Device) -> Result<(Tensor, Tensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = upper.config.window / upper.config.rate;
    let a = gaussian(&mut rng, &[batch, n, upper.config.latent_dim], dtype, dev)?;
    let b = gaussian(&mut rng, &[batch, n, lower.config.latent_dim], dtype, dev)?;
    Ok((a, b))
}

/// Per-column mean and standard deviation over `(count, T, F)` windows; the
/// deviation is floored to keep near-constant features finite.
pub fn feature_stats(windows: &Tensor, floor: f64) -> Result<(Tensor, Tensor)> {
    let f = windows.dim(2)?;
    let flat = windows.reshape(((), f))?.to_dtype(DType::F64)?;
    let mean = flat.mean(0)?;
    let var = flat.broadcast_sub(&mean)?.sqr()?.mean(0)?;
    let std = var.sqrt()?.maximum(floor)?;
    Ok((mean.to_dtype(windows.dtype())?, std.to_dtype(windows.dtype())?))
}

/// Training inputs for one denoiser stage.
pub struct StageData {
    /// Raw (recentred) observation windows `(count, T, F)`.
    pub obs: Tensor,
    /// Clean latents in VQ space `(count, n, D)`.
    pub z0: Tensor,
    /// Upper latents conditioning the lower stage, VQ space.
    pub upper: Option<Tensor>,
}

pub struct TrainedDenoiser {
    pub model: DenoiserModel,
    pub store: std::sync::Arc<crate::init::SeededVarMap>,
    pub log: crate::train::TrainLog,
}

/// Fit a denoiser stage. Observation statistics and the latent scale are
/// measured on `data` and stored with the weights; `upper_scale` is the
/// latent scale of the upper model that produced the conditioning latents.
pub fn train_denoiser(
    config: &DenoiserConfig,
    stage: LatentPart,
    data: &StageData,
    train: &crate::train::TrainConfig,
    upper_scale: Option<f64>,
    seed: u64,
) -> Result<TrainedDenoiser> {
    let dtype = data.z0.dtype();
    let dev = data.z0.device().clone();
    let (store, vb) = crate::init::seeded_builder(seed, dtype, &dev);
    let model = DenoiserModel::new(config.clone(), stage, data.upper.is_some(), vb)?;
    let (mean, std) = feature_stats(&data.obs, 1e-4)?;
    let scale = data.z0.to_dtype(DType::F64)?.sqr()?.mean_all()?.sqrt()?.to_scalar::<f64>()?.max(1e-6);
    let vars = store.sorted_vars();
    let set = |name: &str, t: &Tensor| -> Result<()> {
        let v = vars.iter().find(|(k, _)| k == name).map(|(_, v)| v).expect("buffer");
        Ok(v.set(&t.to_dtype(dtype)?)?)
    };
    set("buffer.obs_mean", &mean)?;
    set("buffer.obs_std", &std)?;
    set("buffer.latent_scale", &Tensor::new(&[scale], &dev)?)?;
    set("buffer.upper_scale", &Tensor::new(&[upper_scale.unwrap_or(1.0)], &dev)?)?;

    let obs = model.normalize_obs(&data.obs)?.detach().contiguous()?;
    let z0 = model.to_model_space(&data.z0)?.detach().contiguous()?;
    let upper = data.upper.as_ref().map(|u| u.contiguous()).transpose()?;
    let trainable = vars.iter().filter(|(k, _)| !is_buffer(k)).map(|(_, v)| v.clone()).collect();
    let k_max = config.train_steps;
    let log = crate::train::fit(
        trainable,
        z0.dim(0)?,
        train,
        seed,
        |batch, rng| {
            let z = crate::data::select(&z0, batch)?;
            let o = crate::data::select(&obs, batch)?;
            let u = upper.as_ref().map(|u| crate::data::select(u, batch)).transpose()?;
            let steps: Vec<usize> = batch.iter().map(|_| rng.random_range(1..=k_max)).collect();
            let noise = gaussian(rng, z.dims(), dtype, &dev)?;
            model.loss(&z, &o, u.as_ref(), &steps, &noise)
        },
        None,
    )?;
    Ok(TrainedDenoiser { model, store, log })
}
