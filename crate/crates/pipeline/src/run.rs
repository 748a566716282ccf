//! Staged training against a checkpoint directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use stratavatar_core::{BodyPartition, KinematicTree, LatentPart};
use stratavatar_models::data::{rotation_tensor, select};
use stratavatar_models::diffusion::{gaussian, sample_latents, train_denoiser, StageData};
use stratavatar_models::fullbody::{decoder_loss, refiner_loss, train_decoder, train_refiner};
use stratavatar_models::geometry::{scalar, TensorSkeleton};
use stratavatar_models::init::SeededVarMap;
use stratavatar_models::vqvae::{gather_part, train_vqvae};
use stratavatar_models::{
    Checkpoint, CheckpointMeta, DecoderConfig, DenoiserConfig, DenoiserModel, FullBodyDecoder, Refiner, RefinerConfig,
    TrainLog, VqVae, VqVaeConfig,
};

use crate::chain::{Chain, Decoding, Denoisers};
use crate::config::{Conditioning, PartitionMode, RunConfig, UpperSource};
use crate::corpus::{load_split, Clip, WindowSet};
use crate::error::{Error, Result};
use crate::stage::Stage;

/// Items stored with each checkpoint to re-check its loss after loading.
const FIXTURE_ITEMS: usize = 16;
/// Windows per forward pass when computing latents for a whole window set.
const CHUNK: usize = 512;
const FIXTURE_PREFIX: &str = "fixture.";

/// Outcome of training one stage.
#[derive(Debug, Clone)]
pub struct StageReport {
    pub stage: Stage,
    pub path: PathBuf,
    pub hash: String,
    pub log: TrainLog,
    pub fixture_loss: f64,
}

pub struct Run {
    pub config: RunConfig,
    pub root: PathBuf,
    pub tree: KinematicTree<f64>,
    pub partition: BodyPartition,
    device: Device,
    clips: OnceLock<(Vec<Clip>, Vec<Clip>)>,
    windows: OnceLock<WindowSet>,
}

pub fn stage_seed(base: u64, stage: Stage) -> u64 {
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1 + stage.index() as u64)
}

impl Run {
    /// Checkpoints go to the configured directory (or the environment override).
    pub fn new(config: RunConfig) -> Self {
        let root = config.checkpoint_dir();
        Self::with_root(config, root)
    }

    pub fn with_root(config: RunConfig, root: impl Into<PathBuf>) -> Self {
        Self {
            config,
            root: root.into(),
            tree: KinematicTree::smpl(),
            partition: BodyPartition::smpl(),
            device: Device::Cpu,
            clips: OnceLock::new(),
            windows: OnceLock::new(),
        }
    }

    /// Use already-loaded clips instead of reading the manifest.
    pub fn with_clips(self, train: Vec<Clip>, test: Vec<Clip>) -> Self {
        let _ = self.clips.set((train, test));
        self
    }

    pub fn checkpoint_path(&self, stage: Stage) -> PathBuf {
        self.root.join(format!("{stage}.ckpt"))
    }

    pub fn log_path(&self, stage: Stage) -> PathBuf {
        self.root.join(format!("{stage}.loss.csv"))
    }

    pub fn clips(&self) -> Result<&(Vec<Clip>, Vec<Clip>)> {
        if let Some(c) = self.clips.get() {
            return Ok(c);
        }
        let loaded = load_split(&self.config, &self.tree)?;
        Ok(self.clips.get_or_init(|| loaded))
    }

    fn windows(&self) -> Result<&WindowSet> {
        if let Some(w) = self.windows.get() {
            return Ok(w);
        }
        let m = &self.config.model;
        let ws = WindowSet::build(&self.clips()?.0, m.window, self.config.data.window_stride, &self.config.tracked(), &self.device)?;
        Ok(self.windows.get_or_init(|| ws))
    }

    /// Reads a checkpoint; a missing file is a missing dependency.
    pub fn load(&self, stage: Stage) -> Result<(Checkpoint, String)> {
        let path = self.checkpoint_path(stage);
        if !path.exists() {
            return Err(Error::MissingDependency(format!("stage `{stage}` has no checkpoint at {}", path.display())));
        }
        let (ck, hash) = Checkpoint::read(&path, &self.device)?;
        if ck.meta.stage != stage.name() {
            return Err(Error::MissingDependency(format!("{} holds stage `{}`, not `{stage}`", path.display(), ck.meta.stage)));
        }
        Ok((ck, hash))
    }

    /// Loads `stage` and checks that every upstream checkpoint it recorded is still the one on disk.
    pub fn load_verified(&self, stage: Stage) -> Result<(Checkpoint, String)> {
        let (ck, hash) = self.load(stage)?;
        for (name, recorded) in &ck.meta.upstream {
            let up: Stage = name.parse().map_err(Error::MissingDependency)?;
            let (_, current) = self.load(up)?;
            if &current != recorded {
                return Err(Error::MissingDependency(format!(
                    "`{stage}` was trained against {name} {recorded}, but {current} is on disk; retrain `{stage}`"
                )));
            }
        }
        Ok((ck, hash))
    }

    fn vqvae(&self, stage: Stage) -> Result<VqVae> {
        let (ck, _) = self.load_verified(stage)?;
        let cfg: VqVaeConfig = ck.config()?;
        let part = stage.part().expect("VQ-VAE stage has a part");
        Ok(VqVae::new(cfg, part, &self.tree, &self.partition, ck.var_builder(DType::F32, &self.device))?)
    }

    fn denoiser(&self, stage: Stage) -> Result<DenoiserModel> {
        let (ck, _) = self.load_verified(stage)?;
        denoiser_from(&ck, stage)
    }

    fn denoisers(&self) -> Result<Denoisers> {
        Ok(match self.config.model.partition {
            PartitionMode::Unified => Denoisers::Unified(self.denoiser(Stage::DiffusionFull)?),
            PartitionMode::Disentangled => {
                let upper = self.denoiser(Stage::DiffusionUpper)?;
                let lower = self.denoiser(Stage::DiffusionLower)?;
                let parallel = !lower.upper_conditioned();
                Denoisers::Stratified { upper, lower, parallel }
            }
        })
    }

    fn decoder(&self) -> Result<FullBodyDecoder> {
        let (ck, _) = self.load_verified(Stage::Decoder)?;
        let cfg: DecoderConfig = ck.config()?;
        Ok(FullBodyDecoder::new(cfg, ck.var_builder(DType::F32, &self.device))?)
    }

    fn refiner(&self) -> Result<Refiner> {
        let (ck, _) = self.load_verified(Stage::Refiner)?;
        let cfg: RefinerConfig = ck.config()?;
        Ok(Refiner::new(cfg, ck.var_builder(DType::F32, &self.device))?)
    }

    fn chain_with(&self, decoding: Decoding, refiner: Option<Refiner>) -> Result<Chain> {
        Ok(Chain {
            denoisers: self.denoisers()?,
            decoding,
            refiner,
            tree: self.tree.clone(),
            window: self.config.model.window,
            sample_steps: self.config.model.sample_steps,
        })
    }

    /// The full inference chain; the refiner is included when the config enables it.
    pub fn chain(&self) -> Result<Chain> {
        let refiner = if self.config.model.use_refiner { Some(self.refiner()?) } else { None };
        self.chain_with(Decoding::FullBody(self.decoder()?), refiner)
    }

    /// Sampled latents decoded by the part VQ-VAE decoders instead of the full-body decoder.
    pub fn part_decoder_chain(&self) -> Result<Chain> {
        if self.config.model.partition == PartitionMode::Unified {
            return Err(Error::Config("part decoders need the disentangled partition".into()));
        }
        let decoding = Decoding::parts(self.vqvae(Stage::VqvaeUpper)?, self.vqvae(Stage::VqvaeLower)?, &self.partition);
        self.chain_with(decoding, None)
    }

    /// Trains every stage of the plan in order.
    pub fn train_all(&self) -> Result<Vec<StageReport>> {
        Stage::plan(&self.config).into_iter().map(|s| self.train(s)).collect()
    }

    /// Trains one stage and writes its checkpoint and loss log.
    pub fn train(&self, stage: Stage) -> Result<StageReport> {
        if !stage.applies_to(&self.config) {
            return Err(Error::Config(format!("stage `{stage}` is not part of this configuration")));
        }
        let mut upstream = BTreeMap::new();
        for dep in stage.upstream(&self.config) {
            let (_, hash) = self.load_verified(dep)?;
            upstream.insert(dep.name().to_string(), hash);
        }
        let seed = stage_seed(self.config.seeds.train, stage);
        log::info!("training {stage} (seed {seed})");
        let trained = match stage {
            Stage::VqvaeUpper | Stage::VqvaeLower | Stage::VqvaeFull => self.train_vqvae(stage, seed)?,
            Stage::DiffusionUpper | Stage::DiffusionLower | Stage::DiffusionFull => self.train_diffusion(stage, seed)?,
            Stage::Decoder => self.train_decoder(seed)?,
            Stage::Refiner => self.train_refiner(seed)?,
        };
        let mut meta = CheckpointMeta::new(stage.name(), trained.config);
        meta.upstream = upstream;
        meta.extra = json!({
            "seed": seed,
            "train": trained.train,
            "fixture_loss": trained.fixture_loss,
            "options": trained.options,
        });
        let mut ck = Checkpoint::from_store(meta, &trained.store);
        for (k, v) in trained.fixture {
            ck.tensors.insert(format!("{FIXTURE_PREFIX}{k}"), v);
        }
        std::fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let path = self.checkpoint_path(stage);
        let hash = ck.write(&path)?;
        let log_path = self.log_path(stage);
        std::fs::write(&log_path, trained.log.to_csv()).map_err(|e| Error::io(&log_path, e))?;
        log::info!("{stage}: {} steps, fixture loss {:.6}, {hash}", trained.log.steps.len(), trained.fixture_loss);
        Ok(StageReport { stage, path, hash, log: trained.log, fixture_loss: trained.fixture_loss })
    }

    fn train_vqvae(&self, stage: Stage, seed: u64) -> Result<Trained> {
        let part = stage.part().expect("VQ-VAE stage has a part");
        let ws = self.windows()?;
        let cfg = self.config.vq_config();
        let train = &self.config.vqvae.train;
        let t = train_vqvae(&ws.rotations, part, &cfg, train, &self.tree, &self.partition, seed)?;
        let fixture = BTreeMap::from([("x".to_string(), gather_part(&head_items(&ws.rotations)?, t.model.joints())?)]);
        let fixture_loss = vq_fixture_loss(&t.model, &fixture)?;
        Ok(Trained {
            config: serde_json::to_value(&cfg)?,
            train: serde_json::to_value(train)?,
            options: json!({ "part": part.as_str() }),
            store: t.store,
            log: t.log,
            fixture,
            fixture_loss,
        })
    }

    fn latents_of(&self, vq: &VqVae, x: &Tensor) -> Result<Tensor> {
        chunked(x.dim(0)?, |s, l| Ok(vq.latents(&gather_part(&x.narrow(0, s, l)?, vq.joints())?)?))
    }

    fn train_diffusion(&self, stage: Stage, seed: u64) -> Result<Trained> {
        let part = stage.part().expect("diffusion stage has a part");
        let ws = self.windows()?;
        let z0 = self.latents_of(&self.vqvae(Stage::vqvae(part))?, &ws.rotations)?;
        let stratified = part == LatentPart::Lower && self.config.model.conditioning == Conditioning::Stratified;
        let (upper, upper_scale) = if stratified {
            let up_model = self.denoiser(Stage::DiffusionUpper)?;
            let upper = match self.config.model.upper_source {
                UpperSource::GroundTruth => self.latents_of(&self.vqvae(Stage::VqvaeUpper)?, &ws.rotations)?,
                UpperSource::Sampled => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0bad_cafe);
                    let obs = up_model.normalize_obs(&ws.obs)?;
                    let steps = self.config.model.sample_steps;
                    let shape = [up_model.config.window / up_model.config.rate, up_model.config.latent_dim];
                    chunked(obs.dim(0)?, |s, l| {
                        let n = gaussian(&mut rng, &[l, shape[0], shape[1]], DType::F32, &self.device)?;
                        Ok(sample_latents(&up_model, &obs.narrow(0, s, l)?, None, n, steps)?)
                    })?
                }
            };
            (Some(upper), Some(up_model.latent_scale()?))
        } else {
            (None, None)
        };
        let data = StageData { obs: ws.obs.clone(), z0, upper };
        let cfg = self.config.denoiser_config();
        let train = &self.config.diffusion.train;
        let t = train_denoiser(&cfg, part, &data, train, upper_scale, seed)?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf1c5);
        let m = head_items(&data.z0)?.dim(0)?;
        let steps: Vec<u32> = (0..m).map(|_| rng.random_range(1..=cfg.train_steps as u32)).collect();
        let mut fixture = BTreeMap::from([
            ("obs".to_string(), head_items(&data.obs)?),
            ("z0".to_string(), head_items(&data.z0)?),
            ("steps".to_string(), Tensor::new(steps, &self.device)?),
        ]);
        let noise = gaussian(&mut rng, head_items(&data.z0)?.dims(), DType::F32, &self.device)?;
        fixture.insert("noise".into(), noise);
        if let Some(u) = &data.upper {
            fixture.insert("upper".into(), head_items(u)?);
        }
        let fixture_loss = denoiser_fixture_loss(&t.model, &fixture)?;
        Ok(Trained {
            config: serde_json::to_value(&cfg)?,
            train: serde_json::to_value(train)?,
            options: json!({ "part": part.as_str(), "upper_conditioned": data.upper.is_some() }),
            store: t.store,
            log: t.log,
            fixture,
            fixture_loss,
        })
    }

    /// Sampled latents for every training window, each with its own noise.
    fn sampled_latents(&self, seed: u64) -> Result<Vec<Tensor>> {
        let ws = self.windows()?;
        let den = self.denoisers()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a3b);
        let parts = den.models().len();
        let mut out: Vec<Vec<Tensor>> = vec![Vec::new(); parts];
        let n = ws.len();
        for s in (0..n).step_by(CHUNK) {
            let l = CHUNK.min(n - s);
            let noise = den.noise(&mut rng, l)?;
            for (o, z) in out.iter_mut().zip(den.sample(&ws.obs.narrow(0, s, l)?, &noise, self.config.model.sample_steps)?) {
                o.push(z);
            }
        }
        out.iter().map(|v| Ok(Tensor::cat(v, 0)?)).collect()
    }

    fn train_decoder(&self, seed: u64) -> Result<Trained> {
        let latents = self.sampled_latents(seed)?;
        let targets = &self.windows()?.rotations;
        let cfg = self.config.decoder_config();
        let train = &self.config.decoder.train;
        let t = train_decoder(&cfg, &latents, targets, &self.tree, train, seed)?;
        let mut fixture = BTreeMap::from([("target".to_string(), head_items(targets)?)]);
        for (i, z) in latents.iter().enumerate() {
            fixture.insert(format!("latent{i}"), head_items(z)?);
        }
        let fixture_loss = decoder_fixture_loss(&t.model, &fixture, &self.tree)?;
        Ok(Trained {
            config: serde_json::to_value(&cfg)?,
            train: serde_json::to_value(train)?,
            options: json!({}),
            store: t.store,
            log: t.log,
            fixture,
            fixture_loss,
        })
    }

    /// Decoded streams of the training clips, cut into refiner buffers with their targets.
    fn refiner_data(&self, seed: u64) -> Result<(Tensor, Tensor, f64)> {
        let chain = self.chain_with(Decoding::FullBody(self.decoder()?), None)?;
        let window = self.config.model.window;
        let stride = self.config.data.refiner_stride;
        let clips = &self.clips()?.0;
        let (mut inputs, mut targets) = (Vec::new(), Vec::new());
        for (i, clip) in clips.iter().enumerate() {
            let stream = chain.decoded_stream(&clip.obs, seed.wrapping_add(i as u64))?;
            let gt = rotation_tensor(&clip.motion, DType::F32, &self.device)?;
            let idx: Vec<usize> = (0..clip.len()).step_by(stride).collect();
            inputs.push(select(&Chain::stream_buffers(&stream, window)?, &idx)?);
            targets.push(select(&Chain::stream_buffers(&gt, window)?, &idx)?);
        }
        let fps = clips.first().map_or(60.0, |c| c.motion.fps);
        Ok((Tensor::cat(&inputs, 0)?, Tensor::cat(&targets, 0)?, fps))
    }

    fn train_refiner(&self, seed: u64) -> Result<Trained> {
        let (inputs, targets, fps) = self.refiner_data(seed)?;
        let cfg = &self.config.refiner;
        let t = train_refiner(&cfg.model, &inputs, &targets, &self.tree, fps, &cfg.weights, &cfg.train, seed)?;
        let fixture = BTreeMap::from([
            ("input".to_string(), head_items(&inputs)?),
            ("target".to_string(), head_items(&targets)?),
        ]);
        let options = json!({ "fps": fps, "weights": cfg.weights });
        let fixture_loss = refiner_fixture_loss(&t.model, &fixture, &self.tree, &options)?;
        Ok(Trained {
            config: serde_json::to_value(&cfg.model)?,
            train: serde_json::to_value(&cfg.train)?,
            options,
            store: t.store,
            log: t.log,
            fixture,
            fixture_loss,
        })
    }

    /// Recorded and recomputed fixture loss of a stored checkpoint.
    pub fn check_fixture(&self, stage: Stage) -> Result<(f64, f64)> {
        let (ck, _) = self.load(stage)?;
        let recorded = ck.meta.extra["fixture_loss"]
            .as_f64()
            .ok_or_else(|| Error::Config(format!("{stage} checkpoint has no fixture loss")))?;
        let fixture: BTreeMap<String, Tensor> = ck
            .tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(FIXTURE_PREFIX).map(|k| (k.to_string(), v.clone())))
            .collect();
        let vb = ck.var_builder(DType::F32, &self.device);
        let recomputed = match stage {
            Stage::VqvaeUpper | Stage::VqvaeLower | Stage::VqvaeFull => {
                let part = stage.part().expect("part");
                vq_fixture_loss(&VqVae::new(ck.config()?, part, &self.tree, &self.partition, vb)?, &fixture)?
            }
            Stage::DiffusionUpper | Stage::DiffusionLower | Stage::DiffusionFull => {
                denoiser_fixture_loss(&denoiser_from(&ck, stage)?, &fixture)?
            }
            Stage::Decoder => decoder_fixture_loss(&FullBodyDecoder::new(ck.config()?, vb)?, &fixture, &self.tree)?,
            Stage::Refiner => {
                refiner_fixture_loss(&Refiner::new(ck.config()?, vb)?, &fixture, &self.tree, &ck.meta.extra["options"])?
            }
        };
        Ok((recorded, recomputed))
    }
}

struct Trained {
    config: serde_json::Value,
    train: serde_json::Value,
    options: serde_json::Value,
    store: std::sync::Arc<SeededVarMap>,
    log: TrainLog,
    fixture: BTreeMap<String, Tensor>,
    fixture_loss: f64,
}

fn denoiser_from(ck: &Checkpoint, stage: Stage) -> Result<DenoiserModel> {
    let cfg: DenoiserConfig = ck.config()?;
    let conditioned = ck.meta.extra["options"]["upper_conditioned"].as_bool().unwrap_or(false);
    let part = stage.part().expect("diffusion stage has a part");
    Ok(DenoiserModel::new(cfg, part, conditioned, ck.var_builder(DType::F32, &Device::Cpu))?)
}

fn head_items(t: &Tensor) -> Result<Tensor> {
    Ok(t.narrow(0, 0, FIXTURE_ITEMS.min(t.dim(0)?))?.contiguous()?)
}

fn chunked(n: usize, mut f: impl FnMut(usize, usize) -> Result<Tensor>) -> Result<Tensor> {
    let mut out = Vec::new();
    for s in (0..n).step_by(CHUNK) {
        out.push(f(s, CHUNK.min(n - s))?);
    }
    Ok(Tensor::cat(&out, 0)?)
}

fn fixture<'a>(f: &'a BTreeMap<String, Tensor>, key: &str) -> Result<&'a Tensor> {
    f.get(key).ok_or_else(|| Error::Config(format!("checkpoint fixture lacks `{key}`")))
}

fn vq_fixture_loss(model: &VqVae, f: &BTreeMap<String, Tensor>) -> Result<f64> {
    Ok(scalar(&model.loss(fixture(f, "x")?)?.0.total)?)
}

fn denoiser_fixture_loss(model: &DenoiserModel, f: &BTreeMap<String, Tensor>) -> Result<f64> {
    let steps: Vec<usize> = fixture(f, "steps")?.to_vec1::<u32>()?.into_iter().map(|s| s as usize).collect();
    let obs = model.normalize_obs(fixture(f, "obs")?)?;
    let z0 = model.to_model_space(fixture(f, "z0")?)?;
    let upper = f.get("upper");
    Ok(scalar(&model.loss(&z0, &obs, upper, &steps, fixture(f, "noise")?)?)?)
}

fn decoder_fixture_loss(model: &FullBodyDecoder, f: &BTreeMap<String, Tensor>, tree: &KinematicTree<f64>) -> Result<f64> {
    let latents: Vec<Tensor> = (0..model.config.latent_dims.len())
        .map(|i| fixture(f, &format!("latent{i}")).cloned())
        .collect::<Result<_>>()?;
    let target = fixture(f, "target")?;
    let skeleton = TensorSkeleton::new(tree, target.dtype(), target.device())?;
    Ok(scalar(&decoder_loss(&model.decode(&latents)?, target, &skeleton, model.config.hand_weight)?.total)?)
}

fn refiner_fixture_loss(
    model: &Refiner,
    f: &BTreeMap<String, Tensor>,
    tree: &KinematicTree<f64>,
    options: &serde_json::Value,
) -> Result<f64> {
    let fps = options["fps"].as_f64().ok_or_else(|| Error::Config("refiner checkpoint lacks fps".into()))?;
    let weights = serde_json::from_value(options["weights"].clone())?;
    let target = fixture(f, "target")?;
    let skeleton = TensorSkeleton::new(tree, target.dtype(), target.device())?;
    Ok(scalar(&refiner_loss(&model.refine(fixture(f, "input")?)?, target, &skeleton, fps, &weights)?.total)?)
}

/// True when `path` holds a checkpoint for `stage`.
pub fn has_checkpoint(root: &Path, stage: Stage) -> bool {
    root.join(format!("{stage}.ckpt")).exists()
}
