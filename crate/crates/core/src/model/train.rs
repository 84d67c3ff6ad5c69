//! Teacher-forced training with Adam, linear warmup and linear decay.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::decode::DecodeOptions;
use super::params::Params;
use super::pointer::{loss, loss_and_grad, TrainingExample};
use super::vocab::Vocab;
use super::{evaluate, GritModel};
use crate::error::{Error, Result};
use crate::ree::Corpus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub min_freq: usize,
    /// Stop once dev F1 reaches this value.
    pub target_dev_f1: Option<f64>,
    /// Reject any update that raises the batch loss and retry it with half
    /// the step (at most `max_backtracks` times). With full batches this
    /// makes the epoch loss non-increasing.
    pub backtrack: bool,
    pub max_backtracks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 2e-3,
            warmup_steps: 100,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            min_freq: 1,
            target_dev_f1: None,
            backtrack: false,
            max_backtracks: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if self.grad_clip < 0.0 {
            return Err(Error::Config("grad_clip must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean example loss over the epoch, measured before each batch update.
    pub loss: f64,
    pub learning_rate: f64,
    pub dev_precision: Option<f64>,
    pub dev_recall: Option<f64>,
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev F1 (the last epoch without dev data).
    pub model: GritModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

struct Adam {
    m: Params,
    v: Params,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut Params, grads: &Params, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let g: Vec<&[f64]> = grads.tensors().into_iter().map(|t| t.data).collect();
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(g)
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.adam_eps);
            }
        }
    }
}

fn learning_rate(cfg: &TrainConfig, step: usize, total: usize) -> f64 {
    if step < cfg.warmup_steps {
        return cfg.learning_rate * (step + 1) as f64 / cfg.warmup_steps as f64;
    }
    let rest = total.saturating_sub(cfg.warmup_steps).max(1);
    let done = step - cfg.warmup_steps;
    cfg.learning_rate * (1.0 - done as f64 / rest as f64).max(0.0)
}

fn batch_loss(model: &GritModel, examples: &[TrainingExample], batch: &[usize]) -> Result<f64> {
    batch.iter().map(|&i| loss(&model.params, &model.config, &examples[i])).sum()
}

/// One pass over `examples` in the given order; returns the mean loss.
fn run_epoch(
    model: &mut GritModel,
    examples: &[TrainingExample],
    order: &[usize],
    adam: &mut Adam,
    grads: &mut Params,
    cfg: &TrainConfig,
    step: &mut usize,
    total_steps: usize,
) -> Result<f64> {
    let mut total_loss = 0.0;
    for batch in order.chunks(cfg.batch_size) {
        grads.fill(0.0);
        let mut before = 0.0;
        for &i in batch {
            before += loss_and_grad(&model.params, &model.config, &examples[i], grads)?;
        }
        total_loss += before;
        grads.scale(1.0 / batch.len() as f64);
        if cfg.grad_clip > 0.0 {
            let norm = grads.squared_norm().sqrt();
            if norm > cfg.grad_clip {
                grads.scale(cfg.grad_clip / norm);
            }
        }
        let lr = learning_rate(cfg, *step, total_steps);
        if cfg.backtrack {
            // Rejected attempts restore the weights but keep the moment
            // updates, so the step direction drifts toward the preconditioned
            // gradient, which always descends for a small enough step.
            let params = model.params.clone();
            let mut scale = 1.0;
            for attempt in 0..=cfg.max_backtracks {
                adam.step(&mut model.params, grads, lr * scale, cfg);
                if batch_loss(model, examples, batch)? <= before {
                    break;
                }
                model.params.clone_from(&params);
                if attempt == cfg.max_backtracks {
                    log::debug!("step {step} rejected after {attempt} backtracks");
                }
                scale *= 0.5;
            }
        } else {
            adam.step(&mut model.params, grads, lr, cfg);
        }
        *step += 1;
    }
    Ok(total_loss / examples.len() as f64)
}

/// Train a fresh model on `train_set`, selecting the epoch with the best
/// `dev` F1. `on_epoch` sees every record as soon as it is produced.
pub fn train(
    train_set: &Corpus,
    dev: Option<&Corpus>,
    model_config: ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Invalid("training corpus is empty".into()));
    }
    let vocab = Vocab::build(&train_set.documents, cfg.min_freq);
    let mut model = GritModel::new(model_config, vocab)?;
    let examples = train_set
        .documents
        .iter()
        .map(|d| model.example(d, &train_set.gold_for(&d.doc_id)).map(|(ex, _)| ex))
        .collect::<Result<Vec<_>>>()?;
    train_examples(&mut model, &examples, dev, cfg, &mut on_epoch)
}

/// Training loop over pre-encoded examples, starting from `model`'s weights.
pub fn train_examples(
    model: &mut GritModel,
    examples: &[TrainingExample],
    dev: Option<&Corpus>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Invalid("no training examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
    let mut adam = Adam {
        m: Params::zeros(&model.config),
        v: Params::zeros(&model.config),
        t: 0,
    };
    let mut grads = Params::zeros(&model.config);
    let steps_per_epoch = examples.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut step = 0;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Params)> = None;
    let opts = DecodeOptions::from_config(&model.config);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let lr = learning_rate(cfg, step, total_steps);
        let loss = run_epoch(model, examples, &order, &mut adam, &mut grads, cfg, &mut step, total_steps)?;
        let dev_prf = match dev {
            Some(dev) => Some(evaluate(model, dev, &opts)?.0.micro.prf()),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            loss,
            learning_rate: lr,
            dev_precision: dev_prf.map(|p| p.precision),
            dev_recall: dev_prf.map(|p| p.recall),
            dev_f1: dev_prf.map(|p| p.f1),
        };
        log::info!(
            "epoch {epoch}: loss {loss:.4}{}",
            record.dev_f1.map(|f| format!(", dev F1 {f:.4}")).unwrap_or_default()
        );
        on_epoch(&record);
        history.push(record);
        let score = dev_prf.map_or(f64::NEG_INFINITY, |p| p.f1);
        if dev.is_some() && best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, epoch, model.params.clone()));
        }
        if let (Some(target), Some(f1)) = (cfg.target_dev_f1, dev_prf.map(|p| p.f1)) {
            if f1 >= target {
                break;
            }
        }
    }

    let mut out = model.clone();
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            out.params = params;
            epoch
        }
        None => history.len(),
    };
    Ok(TrainOutcome {
        model: out,
        history,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays() {
        let cfg = TrainConfig {
            learning_rate: 1.0,
            warmup_steps: 4,
            ..Default::default()
        };
        let lrs: Vec<f64> = (0..12).map(|s| learning_rate(&cfg, s, 12)).collect();
        assert_eq!(lrs[0], 0.25);
        assert_eq!(lrs[3], 1.0);
        assert_eq!(lrs[4], 1.0);
        assert!(lrs[4..].windows(2).all(|w| w[1] < w[0]));
        assert!(lrs.iter().all(|&l| l > 0.0));
    }

    #[test]
    fn no_warmup_starts_at_peak() {
        let cfg = TrainConfig {
            learning_rate: 0.5,
            warmup_steps: 0,
            ..Default::default()
        };
        assert_eq!(learning_rate(&cfg, 0, 10), 0.5);
    }
}
