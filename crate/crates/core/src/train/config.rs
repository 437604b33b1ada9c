use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimiser, schedule and loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Samples per optimiser step.
    pub batch_size: usize,
    /// Samples per forward/backward pass; gradients of the micro-batches
    /// inside one batch are accumulated before the step.
    pub micro_batch_size: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub betas: (f64, f64),
    pub eps_adam: f64,
    pub epochs: usize,
    pub seed: u64,
    /// L2 penalty added to the gradient.
    pub weight_decay: f64,
    /// Validation metrics are computed every this many epochs (and on the
    /// last epoch).
    pub eval_every: usize,
    /// Stop after this many validation rounds without an F1 improvement.
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            micro_batch_size: 64,
            lr_init: 1e-4,
            lr_final: 0.0,
            betas: (0.9, 0.999),
            eps_adam: 1e-8,
            epochs: 100,
            seed: 0,
            weight_decay: 0.0,
            eval_every: 1,
            early_stop_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if self.batch_size == 0 || self.micro_batch_size == 0 {
            return bad("batch_size and micro_batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if !(self.lr_final >= 0.0 && (self.lr_init > self.lr_final || self.lr_init == 0.0 && self.lr_final == 0.0)) {
            return bad(format!(
                "learning rates must satisfy lr_init > lr_final >= 0, got {} and {}",
                self.lr_init, self.lr_final
            ));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad(format!("betas ({b1}, {b2}) must lie in [0,1)"));
        }
        if !(self.eps_adam > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("eps_adam must be positive and weight_decay non-negative".into());
        }
        if self.early_stop_patience == Some(0) {
            return bad("early_stop_patience must be at least 1".into());
        }
        Ok(())
    }
}

/// Linearly decayed learning rate at optimiser step `step` of `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, config: &TrainConfig) -> f64 {
    let frac = step as f64 / total_steps.max(1) as f64;
    config.lr_init + (config.lr_final - config.lr_init) * frac
}
