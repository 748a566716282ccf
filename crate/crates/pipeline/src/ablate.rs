//! Paired comparisons of a trained run against one changed design choice.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use stratavatar_core::metrics::MetricRow;
use stratavatar_models::Objective;

use crate::config::{Conditioning, PartitionMode, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{comparison_csv, evaluate, write_outputs, EvalOutput};
use crate::run::Run;
use crate::stage::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    /// Lower stage without the upper latent.
    Conditioning,
    /// Noise prediction instead of clean-latent prediction.
    Objective,
    /// One full-body VQ-VAE and denoiser.
    Disentangle,
    /// Outputs before the refiner.
    Refiner,
    /// Part VQ-VAE decoders instead of the full-body decoder.
    Decoder,
}

impl Ablation {
    pub const ALL: [Ablation; 5] =
        [Ablation::Conditioning, Ablation::Objective, Ablation::Disentangle, Ablation::Refiner, Ablation::Decoder];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Conditioning => "conditioning",
            Ablation::Objective => "objective",
            Ablation::Disentangle => "disentangle",
            Ablation::Refiner => "refiner",
            Ablation::Decoder => "decoder",
        }
    }

    /// Changed config, its row label and the baseline stages it can reuse.
    fn variant(self, base: &RunConfig) -> Option<(RunConfig, &'static str, Vec<Stage>)> {
        let mut cfg = base.clone();
        match self {
            Ablation::Conditioning => {
                cfg.model.conditioning = match base.model.conditioning {
                    Conditioning::Stratified => Conditioning::Parallel,
                    Conditioning::Parallel => Conditioning::Stratified,
                };
                let label = match cfg.model.conditioning {
                    Conditioning::Parallel => "parallel",
                    Conditioning::Stratified => "stratified",
                };
                Some((cfg, label, vec![Stage::VqvaeUpper, Stage::VqvaeLower, Stage::DiffusionUpper]))
            }
            Ablation::Objective => {
                cfg.model.objective = match base.model.objective {
                    Objective::X0 => Objective::Epsilon,
                    Objective::Epsilon => Objective::X0,
                };
                let label = match cfg.model.objective {
                    Objective::Epsilon => "epsilon",
                    Objective::X0 => "x0",
                };
                let reuse = match base.model.partition {
                    PartitionMode::Disentangled => vec![Stage::VqvaeUpper, Stage::VqvaeLower],
                    PartitionMode::Unified => vec![Stage::VqvaeFull],
                };
                Some((cfg, label, reuse))
            }
            Ablation::Disentangle => {
                cfg.model.partition = match base.model.partition {
                    PartitionMode::Disentangled => PartitionMode::Unified,
                    PartitionMode::Unified => PartitionMode::Disentangled,
                };
                let label = match cfg.model.partition {
                    PartitionMode::Unified => "unified",
                    PartitionMode::Disentangled => "disentangled",
                };
                Some((cfg, label, vec![]))
            }
            Ablation::Refiner | Ablation::Decoder => None,
        }
    }

    /// Scored on part-decoded sampled latents, leaving out the full-body
    /// decoder and refiner so only the changed stage differs.
    fn isolated(self) -> bool {
        self == Ablation::Conditioning
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown ablation `{s}` (expected one of: {})", Self::ALL.map(Ablation::name).join(", ")))
    }
}

fn baseline_label(cfg: &RunConfig, which: Ablation) -> &'static str {
    match which {
        Ablation::Conditioning => match cfg.model.conditioning {
            Conditioning::Stratified => "stratified",
            Conditioning::Parallel => "parallel",
        },
        Ablation::Objective => match cfg.model.objective {
            Objective::X0 => "x0",
            Objective::Epsilon => "epsilon",
        },
        Ablation::Disentangle => match cfg.model.partition {
            PartitionMode::Disentangled => "disentangled",
            PartitionMode::Unified => "unified",
        },
        Ablation::Refiner => "with refiner",
        Ablation::Decoder => "full-body decoder",
    }
}

fn copy_checkpoint(from: &Run, to: &Run, stage: Stage) -> Result<()> {
    let src = from.checkpoint_path(stage);
    let dst = to.checkpoint_path(stage);
    if dst.exists() || !src.exists() {
        return Ok(());
    }
    std::fs::create_dir_all(&to.root).map_err(|e| Error::io(&to.root, e))?;
    std::fs::copy(&src, &dst).map_err(|e| Error::io(&dst, e))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub rows: Vec<(String, MetricRow)>,
    pub table: PathBuf,
}

fn save(out: &EvalOutput, base: &Run, dir: &Path) -> Result<MetricRow> {
    write_outputs(out, &base.tree, dir)?;
    Ok(out.report.aggregate)
}

/// Evaluates the trained baseline and the variant on the test clips and
/// writes `ablation_<name>.csv` plus each side's report under `out`.
pub fn run_ablation(base: &Run, which: Ablation, out: &Path) -> Result<AblationResult> {
    let test = &base.clips()?.1;
    let seed = base.config.seeds.infer;
    let chain = |run: &Run| if which.isolated() { run.part_decoder_chain() } else { run.chain() };
    let baseline = evaluate(&chain(base)?, test, seed, &base.partition)?;
    let label = baseline_label(&base.config, which);
    let mut rows = vec![(label.to_string(), save(&baseline, base, &out.join(slug(label)))?)];
    match which {
        Ablation::Refiner => rows.push(("without refiner".into(), baseline.unrefined.aggregate)),
        Ablation::Decoder => {
            let parts = evaluate(&base.part_decoder_chain()?, test, seed, &base.partition)?;
            rows.push(("full-body decoder, unrefined".into(), baseline.unrefined.aggregate));
            rows.push(("part decoders".into(), save(&parts, base, &out.join("part-decoders"))?));
        }
        _ => {
            let (cfg, label, reuse) = which.variant(&base.config).expect("variant exists");
            let root = base.root.join(format!("ablate-{which}"));
            let (train, test_clips) = base.clips()?.clone();
            let variant = Run::with_root(cfg, root).with_clips(train, test_clips);
            for stage in reuse {
                copy_checkpoint(base, &variant, stage)?;
            }
            std::fs::create_dir_all(&variant.root).map_err(|e| Error::io(&variant.root, e))?;
            let snapshot = variant.root.join("config.toml");
            std::fs::write(&snapshot, variant.config.to_toml()).map_err(|e| Error::io(&snapshot, e))?;
            for stage in Stage::plan(&variant.config) {
                let skip = which.isolated() && matches!(stage, Stage::Decoder | Stage::Refiner);
                if !skip && !variant.checkpoint_path(stage).exists() {
                    variant.train(stage)?;
                }
            }
            let result = evaluate(&chain(&variant)?, test, seed, &variant.partition)?;
            rows.push((label.to_string(), save(&result, base, &out.join(slug(label)))?));
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let table = out.join(format!("ablation_{which}.csv"));
    std::fs::write(&table, comparison_csv(&rows)).map_err(|e| Error::io(&table, e))?;
    Ok(AblationResult { rows, table })
}

fn slug(label: &str) -> String {
    label.replace([' ', ','], "-").replace("--", "-")
}
