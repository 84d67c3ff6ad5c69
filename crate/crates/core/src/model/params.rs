use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Embedding tables plus one pre-norm transformer stack. The same weights
/// encode the source and decode the target; the pointer head has no weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub token_emb: Array2<f64>,
    pub position_emb: Array2<f64>,
    /// Row 0: source segment, row 1: target segment.
    pub segment_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub final_gain: Array1<f64>,
    pub final_bias: Array1<f64>,
}

pub const SOURCE_SEGMENT: usize = 0;
pub const TARGET_SEGMENT: usize = 1;

struct Init {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Init {
    fn matrix(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| self.normal.sample(&mut self.rng))
    }
}

impl LayerParams {
    fn zeros(cfg: &ModelConfig) -> Self {
        let (h, f) = (cfg.hidden_dim, cfg.feedforward_dim);
        LayerParams {
            ln1_gain: Array1::zeros(h),
            ln1_bias: Array1::zeros(h),
            wq: Array2::zeros((h, h)),
            bq: Array1::zeros(h),
            wk: Array2::zeros((h, h)),
            bk: Array1::zeros(h),
            wv: Array2::zeros((h, h)),
            bv: Array1::zeros(h),
            wo: Array2::zeros((h, h)),
            bo: Array1::zeros(h),
            ln2_gain: Array1::zeros(h),
            ln2_bias: Array1::zeros(h),
            w1: Array2::zeros((h, f)),
            b1: Array1::zeros(f),
            w2: Array2::zeros((f, h)),
            b2: Array1::zeros(h),
        }
    }

    fn random(cfg: &ModelConfig, init: &mut Init) -> Self {
        let (h, f) = (cfg.hidden_dim, cfg.feedforward_dim);
        LayerParams {
            ln1_gain: Array1::ones(h),
            wq: init.matrix(h, h),
            wk: init.matrix(h, h),
            wv: init.matrix(h, h),
            wo: init.matrix(h, h),
            ln2_gain: Array1::ones(h),
            w1: init.matrix(h, f),
            w2: init.matrix(f, h),
            ..LayerParams::zeros(cfg)
        }
    }

    fn tensors(&self) -> [(&'static str, &[f64], Vec<usize>); 16] {
        macro_rules! t {
            ($name:literal, $field:expr) => {
                ($name, $field.as_slice().expect("contiguous"), $field.shape().to_vec())
            };
        }
        [
            t!("ln1_gain", self.ln1_gain),
            t!("ln1_bias", self.ln1_bias),
            t!("wq", self.wq),
            t!("bq", self.bq),
            t!("wk", self.wk),
            t!("bk", self.bk),
            t!("wv", self.wv),
            t!("bv", self.bv),
            t!("wo", self.wo),
            t!("bo", self.bo),
            t!("ln2_gain", self.ln2_gain),
            t!("ln2_bias", self.ln2_bias),
            t!("w1", self.w1),
            t!("b1", self.b1),
            t!("w2", self.w2),
            t!("b2", self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 16] {
        [
            self.ln1_gain.as_slice_mut().unwrap(),
            self.ln1_bias.as_slice_mut().unwrap(),
            self.wq.as_slice_mut().unwrap(),
            self.bq.as_slice_mut().unwrap(),
            self.wk.as_slice_mut().unwrap(),
            self.bk.as_slice_mut().unwrap(),
            self.wv.as_slice_mut().unwrap(),
            self.bv.as_slice_mut().unwrap(),
            self.wo.as_slice_mut().unwrap(),
            self.bo.as_slice_mut().unwrap(),
            self.ln2_gain.as_slice_mut().unwrap(),
            self.ln2_bias.as_slice_mut().unwrap(),
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
        ]
    }
}

/// A named view of one parameter tensor.
#[derive(Debug, Clone)]
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

impl Params {
    /// All-zero parameters with the shapes implied by `cfg` (gradient buffers).
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let h = cfg.hidden_dim;
        Params {
            token_emb: Array2::zeros((cfg.vocab_size, h)),
            position_emb: Array2::zeros((cfg.max_source_len, h)),
            segment_emb: Array2::zeros((2, h)),
            layers: (0..cfg.num_layers).map(|_| LayerParams::zeros(cfg)).collect(),
            final_gain: Array1::zeros(h),
            final_bias: Array1::zeros(h),
        }
    }

    /// Scaled-normal weights, unit layer-norm gains, zero biases.
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            normal: Normal::new(0.0, cfg.init_std).expect("valid std"),
        };
        let h = cfg.hidden_dim;
        let token_emb = init.matrix(cfg.vocab_size, h);
        let position_emb = init.matrix(cfg.max_source_len, h);
        let segment_emb = init.matrix(2, h);
        let layers = (0..cfg.num_layers)
            .map(|_| LayerParams::random(cfg, &mut init))
            .collect();
        Params {
            token_emb,
            position_emb,
            segment_emb,
            layers,
            final_gain: Array1::ones(h),
            final_bias: Array1::zeros(h),
        }
    }

    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = vec![
            view("token_emb", &self.token_emb),
            view("position_emb", &self.position_emb),
            view("segment_emb", &self.segment_emb),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, data, shape) in layer.tensors() {
                out.push(TensorView {
                    name: format!("layers.{i}.{name}"),
                    shape,
                    data,
                });
            }
        }
        out.push(view1("final_gain", &self.final_gain));
        out.push(view1("final_bias", &self.final_bias));
        out
    }

    /// Mutable slices in the same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.token_emb.as_slice_mut().unwrap(),
            self.position_emb.as_slice_mut().unwrap(),
            self.segment_emb.as_slice_mut().unwrap(),
        ];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.push(self.final_gain.as_slice_mut().unwrap());
        out.push(self.final_bias.as_slice_mut().unwrap());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        let theirs: Vec<&[f64]> = other.tensors().into_iter().map(|t| t.data).collect();
        for (mine, theirs) in self.tensors_mut().into_iter().zip(theirs) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum()
    }
}

fn view<'a>(name: &str, a: &'a Array2<f64>) -> TensorView<'a> {
    TensorView {
        name: name.to_string(),
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("contiguous"),
    }
}

fn view1<'a>(name: &str, a: &'a Array1<f64>) -> TensorView<'a> {
    TensorView {
        name: name.to_string(),
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("contiguous"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 11,
            hidden_dim: 8,
            num_layers: 2,
            num_heads: 2,
            feedforward_dim: 12,
            max_source_len: 20,
            ..Default::default()
        }
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(Params::init(&cfg()), Params::init(&cfg()));
        let other = ModelConfig { seed: 99, ..cfg() };
        assert_ne!(Params::init(&cfg()), Params::init(&other));
    }

    #[test]
    fn views_and_mut_slices_agree() {
        let mut p = Params::init(&cfg());
        let lens: Vec<usize> = p.tensors().iter().map(|t| t.data.len()).collect();
        let mut_lens: Vec<usize> = p.tensors_mut().iter().map(|t| t.len()).collect();
        assert_eq!(lens, mut_lens);
        let names: Vec<String> = p.tensors().into_iter().map(|t| t.name).collect();
        assert_eq!(names.len(), 3 + 2 * 16 + 2);
        assert!(names.contains(&"layers.1.w2".to_string()));
    }

    #[test]
    fn arithmetic_helpers() {
        let mut a = Params::zeros(&cfg());
        let mut b = Params::zeros(&cfg());
        b.fill(2.0);
        a.add_scaled(&b, 0.5);
        assert_eq!(a.squared_norm(), a.num_parameters() as f64);
        a.scale(3.0);
        assert_eq!(a.token_emb[[0, 0]], 3.0);
    }
}
