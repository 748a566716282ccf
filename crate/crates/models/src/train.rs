//! Shared optimisation loop: seeded shuffling, AdamW with step-decay
//! milestones, held-out evaluation, early stopping and divergence checks.

use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::scalar;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs after which the learning rate is multiplied by `lr_decay`.
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Hard cap on optimiser steps.
    pub max_steps: Option<usize>,
    /// Stop after this many epochs without held-out improvement and restore the best weights.
    pub patience: Option<usize>,
    /// Fraction of items held out for evaluation.
    pub holdout: f64,
    /// Upper bound on the number of held-out items.
    pub holdout_limit: Option<usize>,
    /// Fixed number of batches per epoch, drawn from a cycling shuffle.
    /// `None` makes one epoch a single pass over the training items.
    pub epoch_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 512,
            lr: 1e-4,
            milestones: vec![25, 35, 50],
            lr_decay: 0.2,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 1e-4,
            max_steps: None,
            patience: None,
            holdout: 0.05,
            holdout_limit: None,
            epoch_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.lr * self.lr_decay.powi(passed as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub holdout_loss: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub initial_holdout: Option<f64>,
    pub best_holdout: Option<f64>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,epoch,lr,loss\n");
        for r in &self.steps {
            s.push_str(&format!("{},{},{},{}\n", r.step, r.epoch, r.lr, r.loss));
        }
        s
    }
}

/// Split `0..n` into (train, holdout) index lists.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let k = if fraction > 0.0 && n >= 2 { ((n as f64 * fraction).round() as usize).clamp(1, n - 1) } else { 0 };
    if k == 0 {
        return (idx, Vec::new());
    }
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0b5e));
    let hold = idx.split_off(n - k);
    idx.sort_unstable();
    let mut hold = hold;
    hold.sort_unstable();
    (idx, hold)
}

pub type EpochHook<'a> = dyn FnMut(usize) -> Result<Option<String>> + 'a;

/// Minimise `loss_fn` over items `0..n`. `loss_fn(batch, rng)` returns a
/// scalar loss tensor for the given item indices.
pub fn fit<F>(vars: Vec<Var>, n: usize, cfg: &TrainConfig, seed: u64, mut loss_fn: F, hook: Option<&mut EpochHook>) -> Result<TrainLog>
where
    F: FnMut(&[usize], &mut ChaCha8Rng) -> Result<Tensor>,
{
    if n == 0 {
        return Err(Error::ShapeMismatch("empty training set".into()));
    }
    let mut hook = hook;
    let (mut train, mut hold) = holdout_split(n, cfg.holdout, seed);
    if let Some(limit) = cfg.holdout_limit {
        let extra = hold.len().saturating_sub(limit);
        train.extend(hold.drain(limit.min(hold.len())..));
        if extra > 0 {
            train.sort_unstable();
        }
    }
    let params = ParamsAdamW {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: 1e-8,
        weight_decay: cfg.weight_decay,
    };
    let mut opt = AdamW::new(vars.clone(), params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = TrainLog::default();

    let eval = |loss_fn: &mut F| -> Result<Option<f64>> {
        if hold.is_empty() {
            return Ok(None);
        }
        let mut erng = ChaCha8Rng::seed_from_u64(seed ^ 0xe7a1);
        let mut total = 0.0;
        for chunk in hold.chunks(cfg.batch_size.max(1)) {
            total += scalar(&loss_fn(chunk, &mut erng)?.detach())? * chunk.len() as f64;
        }
        Ok(Some(total / hold.len() as f64))
    };

    log.initial_holdout = eval(&mut loss_fn)?;
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut since_best = 0;
    let mut step = 0;
    let mut cursor = usize::MAX / 2;
    'outer: for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch);
        opt.set_learning_rate(lr);
        let bs = cfg.batch_size.max(1).min(train.len());
        let batches: Vec<Vec<usize>> = match cfg.epoch_steps {
            None => {
                train.shuffle(&mut rng);
                train.chunks(bs).map(<[usize]>::to_vec).collect()
            }
            Some(k) => (0..k)
                .map(|_| {
                    if cursor + bs > train.len() {
                        train.shuffle(&mut rng);
                        cursor = 0;
                    }
                    cursor += bs;
                    train[cursor - bs..cursor].to_vec()
                })
                .collect(),
        };
        let mut sum = 0.0;
        let mut count = 0;
        for batch in &batches {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let loss = loss_fn(batch, &mut rng)?;
            let v = scalar(&loss)?;
            if !v.is_finite() {
                return Err(Error::DivergedTraining { step, loss: v });
            }
            opt.backward_step(&loss)?;
            log.steps.push(StepRecord { step, epoch, lr, loss: v });
            sum += v * batch.len() as f64;
            count += batch.len();
            step += 1;
        }
        if count == 0 {
            break;
        }
        let holdout = eval(&mut loss_fn)?;
        let note = match hook.as_mut() {
            Some(h) => h(epoch)?,
            None => None,
        };
        log::info!("epoch {epoch}: train {:.6} holdout {:?} {}", sum / count as f64, holdout, note.clone().unwrap_or_default());
        log.epochs.push(EpochRecord { epoch, train_loss: sum / count as f64, holdout_loss: holdout, note });
        if let (Some(p), Some(h)) = (cfg.patience, holdout) {
            if best.as_ref().is_none_or(|(b, _)| h < *b) {
                best = Some((h, vars.iter().map(|v| v.as_tensor().copy()).collect::<candle_core::Result<_>>()?));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= p {
                    break 'outer;
                }
            }
        }
        if cfg.max_steps.is_some_and(|m| step >= m) {
            break;
        }
    }
    if let Some((b, snapshot)) = best {
        for (v, t) in vars.iter().zip(snapshot) {
            v.set(&t)?;
        }
        log.best_holdout = Some(b);
    } else {
        log.best_holdout = log.epochs.iter().filter_map(|e| e.holdout_loss).reduce(f64::min);
    }
    Ok(log)
}
