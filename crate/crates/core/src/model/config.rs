use serde::{Deserialize, Serialize};

use crate::corpus::VOCAB_SIZE;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    /// Model width d.
    pub width: usize,
    pub ff_width: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    /// Temperature of every inner-product softmax over items.
    pub tau_sim: f64,
    /// Standard deviation of the initial weights.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 4,
            heads: 4,
            width: 64,
            ff_width: 256,
            vocab_size: VOCAB_SIZE,
            max_context: 576,
            tau_sim: 0.1,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::config("model.layers", "must be positive"));
        }
        if self.heads == 0 || self.width == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::config(
                "model.heads",
                format!("width {} must be a positive multiple of heads {}", self.width, self.heads),
            ));
        }
        if self.ff_width == 0 {
            return Err(Error::config("model.ff_width", "must be positive"));
        }
        if self.vocab_size < VOCAB_SIZE {
            return Err(Error::config(
                "model.vocab_size",
                format!("must cover the tokenizer vocabulary ({VOCAB_SIZE})"),
            ));
        }
        if self.max_context == 0 {
            return Err(Error::config("model.max_context", "must be positive"));
        }
        if !(self.tau_sim > 0.0) || !self.tau_sim.is_finite() {
            return Err(Error::config("model.tau_sim", "must be positive and finite"));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::config("model.init_std", "must be positive"));
        }
        Ok(())
    }
}
