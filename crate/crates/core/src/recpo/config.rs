use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Pooling;
use crate::reward::Estimator;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// Train with the in-batch contrastive loss only; no reasoning tokens.
    #[value(name = "no_reasoning")]
    NoReasoning,
    /// Drop the continuous reward term (beta = 0).
    #[value(name = "no_rc")]
    NoRc,
    /// Drop the discrete reward term (beta = 1).
    #[value(name = "no_rd")]
    NoRd,
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Ablation::None => "none",
            Ablation::NoReasoning => "no_reasoning",
            Ablation::NoRc => "no_rc",
            Ablation::NoRd => "no_rd",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Clipping radius epsilon.
    pub clip_epsilon: f64,
    /// Weight of the continuous reward term.
    pub beta: f64,
    /// Similarity temperature shared by the continuous reward, the in-batch
    /// recommendation softmax and the contrastive loss.
    pub tau_sim: f64,
    /// Cutoff k of the discrete NDCG reward.
    pub ndcg_cutoff: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    /// Full item-table refresh period, in optimizer steps.
    pub refresh_period: usize,
    pub estimator: Estimator,
    pub ablation: Ablation,
    /// Inner update epochs per sampled batch, mu.
    pub inner_epochs: usize,
    /// Total optimizer steps, N.
    pub total_steps: usize,
    /// Divide each trajectory's token terms by its length.
    pub normalize_by_length: bool,
    pub pooling: Pooling,
    /// Validation pass period in steps; `0` disables periodic validation.
    pub val_every: usize,
    /// Number of validation users scored per pass; `0` means all.
    pub val_users: usize,
    /// Checkpoint period in steps; the final step is always saved.
    pub checkpoint_every: usize,
    /// Supplied by the run seed rather than the configuration file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            clip_epsilon: 0.2,
            beta: 0.05,
            tau_sim: 0.1,
            ndcg_cutoff: 1000,
            batch_size: 24,
            learning_rate: 1e-5,
            warmup_steps: 32,
            weight_decay: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            max_grad_norm: None,
            refresh_period: 64,
            estimator: Estimator::Grpo,
            ablation: Ablation::None,
            inner_epochs: 1,
            total_steps: 1000,
            normalize_by_length: false,
            pooling: Pooling::Last,
            val_every: 100,
            val_users: 0,
            checkpoint_every: 250,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The reward weight actually used once ablations are applied.
    pub fn effective_beta(&self) -> f64 {
        match self.ablation {
            Ablation::NoRc => 0.0,
            Ablation::NoRd => 1.0,
            _ => self.beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be finite and > 0, got {v}")))
            }
        };
        positive("train.clip_epsilon", self.clip_epsilon)?;
        positive("train.tau_sim", self.tau_sim)?;
        positive("train.learning_rate", self.learning_rate)?;
        positive("train.adam_epsilon", self.adam_epsilon)?;
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config("train.beta", "must lie in [0, 1]"));
        }
        for (key, v) in [("train.adam_beta1", self.adam_beta1), ("train.adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(key, "must lie in [0, 1)"));
            }
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::config("train.weight_decay", "must be finite and >= 0"));
        }
        if let Some(c) = self.max_grad_norm {
            positive("train.max_grad_norm", c)?;
        }
        for (key, v) in [
            ("train.ndcg_cutoff", self.ndcg_cutoff),
            ("train.batch_size", self.batch_size),
            ("train.refresh_period", self.refresh_period),
            ("train.inner_epochs", self.inner_epochs),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be >= 1"));
            }
        }
        Ok(())
    }
}
