use std::path::Path;

use anyhow::{Context, Result};
use grit_core::model::{DecodeOptions, ModelConfig, TrainConfig};
use grit_core::model::decode::default_step_cap;
use grit_core::model::decode::DEFAULT_MAX_EXTRACTIONS;
use grit_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub enforce_span_order: bool,
    pub max_extractions: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            enforce_span_order: true,
            max_extractions: DEFAULT_MAX_EXTRACTIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub iterations: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            iterations: 10_000,
            seed: 13,
        }
    }
}

/// Everything a run can be configured with; the TOML file mirrors this layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub bootstrap: BootstrapConfig,
    pub synth: SynthConfig,
}

/// Command-line overrides shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_source_len: Option<usize>,
    pub sep_downweigh: Option<f64>,
    pub iterations: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).map_err(|e| ConfigParse(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = overrides.seed {
            cfg.model.seed = seed;
            cfg.bootstrap.seed = seed;
            cfg.synth.seed = seed;
        }
        if let Some(n) = overrides.max_source_len {
            cfg.model.max_source_len = n;
        }
        if let Some(f) = overrides.sep_downweigh {
            cfg.model.sep_downweigh_factor = f;
        }
        if let Some(n) = overrides.iterations {
            cfg.bootstrap.iterations = n;
        }
        Ok(cfg)
    }

    pub fn decode_options(&self) -> DecodeOptions {
        DecodeOptions {
            sep_downweigh: self.model.sep_downweigh_factor,
            enforce_span_order: self.decode.enforce_span_order,
            max_steps: default_step_cap(self.decode.max_extractions),
            trace: false,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// A malformed configuration file (reported with the parse exit code).
#[derive(Debug)]
pub struct ConfigParse(pub String);

impl std::fmt::Display for ConfigParse {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config {}", self.0)
    }
}

impl std::error::Error for ConfigParse {}
