//! Greedy pointer decoding with the two decoding constraints.
//!
//! At every step the pointer distribution is adjusted before the argmax:
//! the separator probability is multiplied by the downweigh factor, `[CLS]`
//! is never a valid choice, and while decoding an end token only positions at
//! or after the pending begin are allowed (and no separator, so segments stay
//! paired). Decoding stops at the fifth separator or at the step cap.

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::Params;
use super::pointer::softmax;
use super::transformer::{pointer_logits, IncrementalDecoder};
use crate::error::Result;
use crate::linearize::PointerSequence;
use crate::ree::RoleId;

pub const DEFAULT_MAX_EXTRACTIONS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeOptions {
    /// Separator probability multiplier; 1.0 disables downweighing.
    pub sep_downweigh: f64,
    /// Restrict end tokens to positions at or after their begin token.
    pub enforce_span_order: bool,
    /// Hard cap on predicted tokens.
    pub max_steps: usize,
    /// Record per-step distributions.
    #[serde(skip)]
    pub trace: bool,
}

impl DecodeOptions {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        DecodeOptions {
            sep_downweigh: cfg.sep_downweigh_factor,
            enforce_span_order: true,
            max_steps: default_step_cap(DEFAULT_MAX_EXTRACTIONS),
            trace: false,
        }
    }
}

/// Two pointers per extraction plus the five separators.
pub fn default_step_cap(max_extractions: usize) -> usize {
    2 * max_extractions + RoleId::COUNT
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    Begin,
    End { begin: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepTrace {
    pub phase: Phase,
    /// Raw pointer distribution.
    pub probs: Vec<f64>,
    pub chosen: usize,
}

impl StepTrace {
    /// Argmax under the decoding constraints with an arbitrary separator
    /// factor (positional masking as recorded for this step).
    pub fn argmax_with(&self, sep: usize, sep_factor: f64, enforce_span_order: bool) -> usize {
        constrained_argmax(&self.probs, sep, self.phase, sep_factor, enforce_span_order)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub sequence: PointerSequence,
    /// The step cap was hit before the fifth separator.
    pub truncated: bool,
    pub steps: Vec<StepTrace>,
}

fn constrained_argmax(
    probs: &[f64],
    sep: usize,
    phase: Phase,
    sep_factor: f64,
    enforce_span_order: bool,
) -> usize {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (j, &p) in probs.iter().enumerate() {
        let valid = match phase {
            _ if j == 0 => false,
            Phase::Begin => true,
            Phase::End { begin } => j != sep && (!enforce_span_order || j >= begin),
        };
        if !valid {
            continue;
        }
        let score = if j == sep { p * sep_factor } else { p };
        if score > best.1 {
            best = (j, score);
        }
    }
    best.0
}

/// Greedy decode of one source sequence (token ids including `[CLS]` and `[SEP]`).
pub fn decode(
    params: &Params,
    cfg: &ModelConfig,
    source_ids: &[usize],
    opts: &DecodeOptions,
) -> Result<DecodeOutput> {
    let sep = source_ids.len() - 1;
    let mut dec = IncrementalDecoder::new(params, cfg, source_ids)?;
    let mut indices = vec![PointerSequence::START];
    let mut steps = Vec::new();
    let mut separators = 0;
    let mut phase = Phase::Begin;
    let mut truncated = false;
    let mut state = dec.step(params, cfg, PointerSequence::START)?;
    loop {
        if indices.len() - 1 >= opts.max_steps {
            truncated = true;
            break;
        }
        let probs = softmax(
            pointer_logits(state.view(), dec.source_states())
                .as_slice()
                .expect("contiguous"),
        );
        let chosen = constrained_argmax(&probs, sep, phase, opts.sep_downweigh, opts.enforce_span_order);
        indices.push(chosen);
        if opts.trace {
            steps.push(StepTrace { phase, probs, chosen });
        }
        phase = if chosen == sep {
            separators += 1;
            if separators == RoleId::COUNT {
                break;
            }
            Phase::Begin
        } else {
            match phase {
                Phase::Begin => Phase::End { begin: chosen },
                Phase::End { .. } => Phase::Begin,
            }
        };
        state = dec.step(params, cfg, chosen)?;
    }
    if truncated {
        if let Phase::End { .. } = phase {
            indices.pop();
        }
        indices.extend(std::iter::repeat_n(sep, RoleId::COUNT - separators));
    }
    Ok(DecodeOutput {
        sequence: PointerSequence { indices, sep },
        truncated,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constraints_applied_before_argmax() {
        let probs = [0.5, 0.05, 0.1, 0.05, 0.3];
        let sep = 4;
        // [CLS] never chosen even when most probable
        assert_eq!(constrained_argmax(&probs, sep, Phase::Begin, 1.0, true), 4);
        // downweighed separator loses to the best body token
        assert_eq!(constrained_argmax(&probs, sep, Phase::Begin, 0.01, true), 2);
        // end tokens cannot precede their begin or be a separator
        assert_eq!(constrained_argmax(&probs, sep, Phase::End { begin: 3 }, 1.0, true), 3);
        assert_eq!(constrained_argmax(&probs, sep, Phase::End { begin: 3 }, 1.0, false), 2);
    }

    #[test]
    fn downweigh_never_promotes_separator() {
        let probs = [0.0, 0.2, 0.5, 0.3];
        for factor in [1.0, 0.5, 0.01] {
            assert_ne!(constrained_argmax(&probs, 3, Phase::Begin, factor, true), 3);
        }
    }
}
