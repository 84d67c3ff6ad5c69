//! Pointer head and teacher-forced cross-entropy.

use ndarray::{Array2, ArrayView2, Axis};

use super::config::ModelConfig;
use super::mask::build_mask;
use super::params::Params;
use super::transformer::{backward, embed_joint, embed_joint_backward, forward};
use crate::error::{Error, Result};

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Pointer distribution over source positions for every target row:
/// `softmax_j(y_t · x_j)`.
pub fn pointer_distributions(source: ArrayView2<f64>, target: ArrayView2<f64>) -> Array2<f64> {
    let mut z = target.dot(&source.t());
    for mut row in z.axis_iter_mut(Axis(0)) {
        let p = softmax(row.as_slice().expect("row-major"));
        row.iter_mut().zip(p).for_each(|(a, b)| *a = b);
    }
    z
}

/// Mean of `-ln p[t, label_t]` over rows.
pub fn mean_cross_entropy(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(t, &g)| -probs[[t, g]].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / labels.len() as f64
}

/// One encoded training pair: source token ids (with `[CLS]`/`[SEP]`) and the
/// full gold pointer sequence starting with `<S>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub doc_id: String,
    pub source_ids: Vec<usize>,
    pub target: Vec<usize>,
}

impl TrainingExample {
    /// Decoder inputs `<S>, g_1 .. g_{n}`: every gold index but the last.
    pub fn decoder_inputs(&self) -> &[usize] {
        &self.target[..self.target.len() - 1]
    }

    /// Labels `g_1 .. g_{n+1}`.
    pub fn labels(&self) -> &[usize] {
        &self.target[1..]
    }

    fn check(&self) -> Result<()> {
        if self.target.len() < 2 {
            return Err(Error::Dimension("target must hold <S> and at least one label".into()));
        }
        if let Some(bad) = self.target.iter().find(|&&i| i >= self.source_ids.len()) {
            return Err(Error::Dimension(format!("pointer {bad} outside source")));
        }
        Ok(())
    }
}

/// Mean token-level cross-entropy under teacher forcing.
fn loss_inner(
    params: &Params,
    cfg: &ModelConfig,
    ex: &TrainingExample,
    grads: Option<&mut Params>,
) -> Result<f64> {
    ex.check()?;
    let inputs = ex.decoder_inputs();
    let labels = ex.labels();
    let ns = ex.source_ids.len();
    let emb = embed_joint(params, &ex.source_ids, inputs)?;
    let mask = build_mask(ns - 1, inputs.len() - 1);
    let fwd = forward(params, cfg, emb, &mask)?;
    let probs = pointer_distributions(fwd.source_states(), fwd.target_states());
    let steps = labels.len() as f64;
    let loss = mean_cross_entropy(&probs, labels);

    if let Some(grads) = grads {
        let mut dz = probs;
        for (t, &g) in labels.iter().enumerate() {
            dz[[t, g]] -= 1.0;
        }
        dz /= steps;
        let d_target = dz.dot(&fwd.source_states());
        let d_source = dz.t().dot(&fwd.target_states());
        let d_states = ndarray::concatenate(Axis(0), &[d_source.view(), d_target.view()])
            .expect("same width");
        let d_emb = backward(params, cfg, &fwd, &d_states, grads);
        embed_joint_backward(grads, &ex.source_ids, inputs, d_emb.view());
    }
    Ok(loss)
}

pub fn loss(params: &Params, cfg: &ModelConfig, ex: &TrainingExample) -> Result<f64> {
    loss_inner(params, cfg, ex, None)
}

/// Loss for `ex`; its gradient is added into `grads`.
pub fn loss_and_grad(
    params: &Params,
    cfg: &ModelConfig,
    ex: &TrainingExample,
    grads: &mut Params,
) -> Result<f64> {
    loss_inner(params, cfg, ex, Some(grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_properties() {
        let p = softmax(&[2.0, 2.0, 2.0, 2.0]);
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let z = [0.3, -1.2, 4.0, 0.0];
        let shifted: Vec<f64> = z.iter().map(|v| v + 17.5).collect();
        for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((softmax(&z).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_extremes() {
        let labels = [2usize, 0, 1];
        let one_hot = Array2::from_shape_fn((3, 4), |(t, j)| f64::from(u8::from(labels[t] == j)));
        assert_eq!(mean_cross_entropy(&one_hot, &labels), 0.0);
        let uniform = Array2::from_elem((3, 4), 0.25);
        assert!((mean_cross_entropy(&uniform, &labels) - 4f64.ln()).abs() < 1e-15);
    }

    fn tiny() -> (ModelConfig, TrainingExample) {
        let cfg = ModelConfig {
            vocab_size: 8,
            hidden_dim: 8,
            num_layers: 1,
            num_heads: 2,
            feedforward_dim: 8,
            max_source_len: 16,
            ..Default::default()
        };
        let ex = TrainingExample {
            doc_id: "x".into(),
            source_ids: vec![1, 3, 4, 5, 2],
            target: vec![0, 1, 2, 4, 4, 4, 4, 4],
        };
        (cfg, ex)
    }

    #[test]
    fn uniform_pointers_give_log_source_len() {
        let (cfg, ex) = tiny();
        let mut p = Params::init(&cfg);
        // zero final gain and bias: every state is 0, every logit equal
        p.final_gain.fill(0.0);
        let l = loss(&p, &cfg, &ex).unwrap();
        assert!((l - (ex.source_ids.len() as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn malformed_examples_rejected() {
        let (cfg, mut ex) = tiny();
        let p = Params::init(&cfg);
        ex.target = vec![0, 9];
        assert!(loss(&p, &cfg, &ex).is_err());
        ex.target = vec![0];
        assert!(loss(&p, &cfg, &ex).is_err());
    }
}
