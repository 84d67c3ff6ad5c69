//! Analytic gradients against central finite differences.

use grit_core::model::params::Params;
use grit_core::model::pointer::{loss, loss_and_grad, TrainingExample};
use grit_core::model::ModelConfig;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const SAMPLE: usize = 256;

fn config() -> ModelConfig {
    ModelConfig {
        vocab_size: 20,
        hidden_dim: 32,
        num_layers: 2,
        num_heads: 4,
        feedforward_dim: 48,
        max_source_len: 24,
        init_std: 0.2,
        ..Default::default()
    }
}

fn random_example(rng: &mut ChaCha8Rng, cfg: &ModelConfig, id: usize) -> TrainingExample {
    let body = rng.random_range(3..cfg.max_source_len - 2);
    let mut source_ids = vec![1];
    source_ids.extend((0..body).map(|_| rng.random_range(3..cfg.vocab_size)));
    source_ids.push(2);
    let sep = source_ids.len() - 1;
    let mut target = vec![0];
    for _ in 0..5 {
        for _ in 0..rng.random_range(0..3) {
            let b = rng.random_range(1..sep);
            target.push(b);
            target.push(rng.random_range(b..sep));
        }
        target.push(sep);
    }
    TrainingExample {
        doc_id: format!("g{id}"),
        source_ids,
        target,
    }
}

fn total_loss(p: &Params, cfg: &ModelConfig, examples: &[TrainingExample]) -> f64 {
    examples.iter().map(|ex| loss(p, cfg, ex).unwrap()).sum()
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let cfg = config();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let examples: Vec<_> = (0..5).map(|i| random_example(&mut rng, &cfg, i)).collect();
    let params = Params::init(&cfg);
    let mut grads = Params::zeros(&cfg);
    for ex in &examples {
        loss_and_grad(&params, &cfg, ex, &mut grads).unwrap();
    }

    let names: Vec<String> = params.tensors().into_iter().map(|t| t.name).collect();
    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(|t| t.data.to_vec()).collect();
    let mut worst = (0.0, String::new());
    for (k, name) in names.iter().enumerate() {
        let len = analytic[k].len();
        let picked: Vec<usize> = if len <= SAMPLE {
            (0..len).collect()
        } else {
            sample(&mut rng, len, SAMPLE).into_vec()
        };
        let (mut diff2, mut ref2) = (0.0, 0.0);
        for &i in &picked {
            let mut plus = params.clone();
            plus.tensors_mut()[k][i] += H;
            let mut minus = params.clone();
            minus.tensors_mut()[k][i] -= H;
            let numeric = (total_loss(&plus, &cfg, &examples) - total_loss(&minus, &cfg, &examples)) / (2.0 * H);
            let a = analytic[k][i];
            assert!(
                (a - numeric).abs() <= 1e-6 + 1e-3 * numeric.abs().max(a.abs()),
                "{name}[{i}]: analytic {a:e} vs numeric {numeric:e}"
            );
            diff2 += (a - numeric).powi(2);
            ref2 += numeric.powi(2);
        }
        // key biases shift every score of a query equally: their true
        // gradient is zero and only the absolute floor applies
        let (diff, reference) = (diff2.sqrt(), ref2.sqrt());
        assert!(diff <= 1e-3 * reference + 1e-7, "{name}: error {diff:e} vs norm {reference:e}");
        if reference > 1e-7 && diff / reference > worst.0 {
            worst = (diff / reference, name.clone());
        }
    }
    eprintln!("worst tensor relative error {:e} ({})", worst.0, worst.1);
}
