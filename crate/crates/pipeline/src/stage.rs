//! Training stages and the checkpoints each one needs.

use std::fmt;
use std::str::FromStr;

use stratavatar_core::LatentPart;

use crate::config::{Conditioning, PartitionMode, RunConfig, UpperSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    VqvaeUpper,
    VqvaeLower,
    VqvaeFull,
    DiffusionUpper,
    DiffusionLower,
    DiffusionFull,
    Decoder,
    Refiner,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::VqvaeUpper,
        Stage::VqvaeLower,
        Stage::VqvaeFull,
        Stage::DiffusionUpper,
        Stage::DiffusionLower,
        Stage::DiffusionFull,
        Stage::Decoder,
        Stage::Refiner,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::VqvaeUpper => "vqvae-upper",
            Stage::VqvaeLower => "vqvae-lower",
            Stage::VqvaeFull => "vqvae-full",
            Stage::DiffusionUpper => "diffusion-upper",
            Stage::DiffusionLower => "diffusion-lower",
            Stage::DiffusionFull => "diffusion-full",
            Stage::Decoder => "decoder",
            Stage::Refiner => "refiner",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&s| s == self).expect("listed")
    }

    /// Body part of a VQ-VAE or diffusion stage.
    pub fn part(self) -> Option<LatentPart> {
        match self {
            Stage::VqvaeUpper | Stage::DiffusionUpper => Some(LatentPart::Upper),
            Stage::VqvaeLower | Stage::DiffusionLower => Some(LatentPart::Lower),
            Stage::VqvaeFull | Stage::DiffusionFull => Some(LatentPart::Full),
            Stage::Decoder | Stage::Refiner => None,
        }
    }

    pub fn vqvae(part: LatentPart) -> Self {
        match part {
            LatentPart::Upper => Stage::VqvaeUpper,
            LatentPart::Lower => Stage::VqvaeLower,
            LatentPart::Full => Stage::VqvaeFull,
        }
    }

    pub fn diffusion(part: LatentPart) -> Self {
        match part {
            LatentPart::Upper => Stage::DiffusionUpper,
            LatentPart::Lower => Stage::DiffusionLower,
            LatentPart::Full => Stage::DiffusionFull,
        }
    }

    /// Stages of a complete run, in training order.
    pub fn plan(cfg: &RunConfig) -> Vec<Stage> {
        let mut plan = match cfg.model.partition {
            PartitionMode::Disentangled => vec![
                Stage::VqvaeUpper,
                Stage::VqvaeLower,
                Stage::DiffusionUpper,
                Stage::DiffusionLower,
                Stage::Decoder,
                Stage::Refiner,
            ],
            PartitionMode::Unified => vec![Stage::VqvaeFull, Stage::DiffusionFull, Stage::Decoder, Stage::Refiner],
        };
        if !cfg.model.use_refiner {
            plan.pop();
        }
        plan
    }

    pub fn applies_to(self, cfg: &RunConfig) -> bool {
        Self::plan(cfg).contains(&self)
    }

    /// Checkpoints loaded while training this stage.
    pub fn upstream(self, cfg: &RunConfig) -> Vec<Stage> {
        let unified = cfg.model.partition == PartitionMode::Unified;
        match self {
            Stage::VqvaeUpper | Stage::VqvaeLower | Stage::VqvaeFull => vec![],
            Stage::DiffusionUpper => vec![Stage::VqvaeUpper],
            Stage::DiffusionFull => vec![Stage::VqvaeFull],
            Stage::DiffusionLower => {
                let mut deps = vec![Stage::VqvaeLower];
                if cfg.model.conditioning == Conditioning::Stratified {
                    if cfg.model.upper_source == UpperSource::GroundTruth {
                        deps.push(Stage::VqvaeUpper);
                    }
                    deps.push(Stage::DiffusionUpper);
                }
                deps
            }
            Stage::Decoder if unified => vec![Stage::DiffusionFull],
            Stage::Decoder => vec![Stage::DiffusionUpper, Stage::DiffusionLower],
            Stage::Refiner if unified => vec![Stage::DiffusionFull, Stage::Decoder],
            Stage::Refiner => vec![Stage::DiffusionUpper, Stage::DiffusionLower, Stage::Decoder],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}` (expected one of: {})", Self::ALL.map(Stage::name).join(", ")))
    }
}
