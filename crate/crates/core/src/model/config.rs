use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and decoding hyperparameters of the pointer transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub feedforward_dim: usize,
    pub max_source_len: usize,
    /// Multiplier applied to the separator probability at decode time.
    pub sep_downweigh_factor: f64,
    pub init_std: f64,
    pub layer_norm_eps: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 4,
            feedforward_dim: 256,
            max_source_len: 512,
            sep_downweigh_factor: 0.01,
            init_std: 0.02,
            layer_norm_eps: 1e-6,
            seed: 13,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("feedforward_dim", self.feedforward_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.max_source_len < 3 {
            return Err(Error::Config("max_source_len must be at least 3".into()));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if !(self.sep_downweigh_factor > 0.0 && self.sep_downweigh_factor <= 1.0) {
            return Err(Error::Config(format!(
                "sep_downweigh_factor {} outside (0, 1]",
                self.sep_downweigh_factor
            )));
        }
        if !(self.init_std > 0.0) || !(self.layer_norm_eps > 0.0) {
            return Err(Error::Config("init_std and layer_norm_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}
