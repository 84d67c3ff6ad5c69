//! Versioned JSON checkpoints: config, vocabulary and every tensor with its shape.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::Params;
use super::vocab::Vocab;
use super::GritModel;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const FORMAT: &str = "grit-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    format: String,
    version: u32,
    config: ModelConfig,
    vocab: Vocab,
    tensors: Vec<Tensor>,
}

pub fn to_string(model: &GritModel) -> Result<String> {
    let file = File {
        format: FORMAT.into(),
        version: VERSION,
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        tensors: model
            .params
            .tensors()
            .into_iter()
            .map(|t| Tensor {
                name: t.name,
                shape: t.shape,
                data: t.data.to_vec(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn from_str(text: &str) -> Result<GritModel> {
    let file: File = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            file.format, file.version
        )));
    }
    file.config.validate()?;
    if file.vocab.len() != file.config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} entries but config says {}",
            file.vocab.len(),
            file.config.vocab_size
        )));
    }
    let mut params = Params::zeros(&file.config);
    let expected: Vec<(String, Vec<usize>)> = params
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.shape))
        .collect();
    if expected.len() != file.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            expected.len(),
            file.tensors.len()
        )));
    }
    for ((slot, (name, shape)), t) in params.tensors_mut().into_iter().zip(expected).zip(&file.tensors) {
        if t.name != name || t.shape != shape {
            return Err(Error::Checkpoint(format!(
                "tensor {} {:?} does not match expected {name} {shape:?}",
                t.name, t.shape
            )));
        }
        if t.data.len() != slot.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} holds {} values for shape {shape:?}",
                t.data.len()
            )));
        }
        slot.copy_from_slice(&t.data);
    }
    Ok(GritModel {
        config: file.config,
        vocab: file.vocab,
        params,
    })
}

pub fn save(model: &GritModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, to_string(model)?.as_bytes())
}

pub fn load(path: impl AsRef<Path>) -> Result<GritModel> {
    from_str(&std::fs::read_to_string(path)?)
}
