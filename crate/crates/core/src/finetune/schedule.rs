use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Optimizer and schedule settings. Defaults are the reference recipe:
/// SGD at 1e-4 with momentum 0.9, batches of 64 for 50 epochs, 200 warmup
/// and 400 cooldown batches, ×0.75 at epochs 8, 14, 25, 35 and 40, and
/// gradients clipped to norm 1.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_batches: usize,
    pub cooldown_batches: usize,
    /// 1-indexed epochs; the factor applies from the start of the named epoch.
    pub milestone_epochs: Vec<usize>,
    pub milestone_factor: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub normalize_embeddings: bool,
    /// Adapter output width; the input width when unset.
    pub output_dim: Option<usize>,
    /// Keep the parameters of the epoch with the best validation AUC.
    pub select_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.0001,
            momentum: 0.9,
            batch_size: 64,
            epochs: 50,
            warmup_batches: 200,
            cooldown_batches: 400,
            milestone_epochs: vec![8, 14, 25, 35, 40],
            milestone_factor: 0.75,
            clip_norm: 1.5,
            seed: 0,
            normalize_embeddings: true,
            output_dim: None,
            select_best: true,
        }
    }
}

impl TrainConfig {
    /// Checks everything that does not depend on the dataset size.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.milestone_factor.is_finite() && self.milestone_factor > 0.0) {
            return bad(format!("milestone_factor must be positive, got {}", self.milestone_factor));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if self.output_dim == Some(0) {
            return bad("output_dim must be positive".into());
        }
        Ok(())
    }

    pub fn batches_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size)
    }

    /// Checks the ramps fit inside the run.
    pub fn validate_for(&self, samples: usize) -> Result<usize> {
        self.validate()?;
        let total = self.epochs * self.batches_per_epoch(samples);
        if self.warmup_batches + self.cooldown_batches > total {
            return Err(Error::InvalidConfig(format!(
                "warmup ({}) + cooldown ({}) exceeds {total} total batches",
                self.warmup_batches, self.cooldown_batches
            )));
        }
        Ok(total)
    }
}

/// Learning rate for global batch `index` (0-based) during 1-based `epoch`.
pub fn lr_at(config: &TrainConfig, index: usize, total_batches: usize, epoch: usize) -> Result<f64> {
    if index >= total_batches {
        return Err(Error::IndexOutOfRange {
            index,
            total: total_batches,
        });
    }
    let passed = config.milestone_epochs.iter().filter(|&&m| m <= epoch).count();
    let mut lr = config.base_lr * config.milestone_factor.powi(passed as i32);
    if index < config.warmup_batches {
        lr *= (index + 1) as f64 / config.warmup_batches as f64;
    } else if index >= total_batches.saturating_sub(config.cooldown_batches) {
        lr *= (total_batches - index) as f64 / config.cooldown_batches as f64;
    }
    Ok(lr)
}
