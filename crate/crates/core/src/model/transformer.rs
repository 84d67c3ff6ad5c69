//! Pre-norm transformer stack with hand-written backpropagation.
//!
//! One stack serves as encoder and decoder: source and target embeddings are
//! concatenated into a joint sequence and the [`AttentionMask`] decides who
//! sees whom. Target rows are embedded with the position of the source token
//! they point at, so there are no target-side positions.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::config::ModelConfig;
use super::mask::{mask_for_lengths, AttentionMask};
use super::params::{LayerParams, Params, SOURCE_SEGMENT, TARGET_SEGMENT};
use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn check_ids(params: &Params, source_ids: &[usize]) -> Result<()> {
    let (vocab, max_len) = (params.token_emb.nrows(), params.position_emb.nrows());
    if source_ids.len() > max_len {
        return Err(Error::Dimension(format!(
            "source length {} exceeds max_source_len {max_len}",
            source_ids.len()
        )));
    }
    if let Some(bad) = source_ids.iter().find(|&&id| id >= vocab) {
        return Err(Error::Dimension(format!("token id {bad} outside vocabulary of {vocab}")));
    }
    Ok(())
}

/// `x_i = token(tok_i) + position(i) + segment(A)`.
pub fn embed_source(params: &Params, source_ids: &[usize]) -> Result<Array2<f64>> {
    check_ids(params, source_ids)?;
    let h = params.token_emb.ncols();
    let seg = params.segment_emb.row(SOURCE_SEGMENT);
    let mut out = Array2::zeros((source_ids.len(), h));
    for (i, (mut row, &id)) in out.outer_iter_mut().zip(source_ids).enumerate() {
        row.assign(&params.token_emb.row(id));
        row += &params.position_emb.row(i);
        row += &seg;
    }
    Ok(out)
}

/// `y_t = token(src[p_t]) + position(p_t) + segment(B)` for pointed-at source
/// positions `p_t`.
pub fn embed_target(params: &Params, source_ids: &[usize], pointers: &[usize]) -> Result<Array2<f64>> {
    check_ids(params, source_ids)?;
    let h = params.token_emb.ncols();
    let seg = params.segment_emb.row(TARGET_SEGMENT);
    let mut out = Array2::zeros((pointers.len(), h));
    for (mut row, &p) in out.outer_iter_mut().zip(pointers) {
        let id = *source_ids.get(p).ok_or_else(|| {
            Error::Dimension(format!("pointer {p} outside source of length {}", source_ids.len()))
        })?;
        row.assign(&params.token_emb.row(id));
        row += &params.position_emb.row(p);
        row += &seg;
    }
    Ok(out)
}

/// Joint embedding: source rows followed by target rows.
pub fn embed_joint(params: &Params, source_ids: &[usize], pointers: &[usize]) -> Result<Array2<f64>> {
    let src = embed_source(params, source_ids)?;
    let tgt = embed_target(params, source_ids, pointers)?;
    Ok(ndarray::concatenate(Axis(0), &[src.view(), tgt.view()]).expect("same width"))
}

/// Scatter joint-embedding gradients back into the embedding tables.
pub fn embed_joint_backward(
    grads: &mut Params,
    source_ids: &[usize],
    pointers: &[usize],
    d_embed: ArrayView2<f64>,
) {
    let ns = source_ids.len();
    for (i, &id) in source_ids.iter().enumerate() {
        let d = d_embed.row(i);
        let mut tok = grads.token_emb.row_mut(id);
        tok += &d;
        let mut pos = grads.position_emb.row_mut(i);
        pos += &d;
        let mut seg = grads.segment_emb.row_mut(SOURCE_SEGMENT);
        seg += &d;
    }
    for (t, &p) in pointers.iter().enumerate() {
        let d = d_embed.row(ns + t);
        let mut tok = grads.token_emb.row_mut(source_ids[p]);
        tok += &d;
        let mut pos = grads.position_emb.row_mut(p);
        pos += &d;
        let mut seg = grads.segment_emb.row_mut(TARGET_SEGMENT);
        seg += &d;
    }
}

#[derive(Debug, Clone)]
struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(
    x: ArrayView2<f64>,
    gain: &Array1<f64>,
    bias: &Array1<f64>,
    eps: f64,
) -> (Array2<f64>, NormCache) {
    let h = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.outer_iter_mut().zip(inv_std.iter_mut()) {
        let mean = row.sum() / h;
        row -= mean;
        let var = row.dot(&row) / h;
        *inv = 1.0 / (var + eps).sqrt();
        row *= *inv;
    }
    let out = &xhat * gain + bias;
    (out, NormCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &NormCache,
    gain: &Array1<f64>,
    d_gain: &mut Array1<f64>,
    d_bias: &mut Array1<f64>,
) -> Array2<f64> {
    *d_gain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *d_bias += &dy.sum_axis(Axis(0));
    let h = dy.ncols() as f64;
    let mut dx = dy * gain;
    for ((mut row, xhat), &inv) in dx
        .outer_iter_mut()
        .zip(cache.xhat.outer_iter())
        .zip(cache.inv_std.iter())
    {
        let mean_d = row.sum() / h;
        let mean_dx = row.dot(&xhat) / h;
        row.zip_mut_with(&xhat, |d, &xh| *d = inv * (*d - mean_d - xh * mean_dx));
    }
    dx
}

fn linear(x: ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(w) + b
}

/// Row-wise softmax over allowed columns; disallowed entries become exactly 0.
fn masked_softmax(scores: &mut Array2<f64>, mask: &AttentionMask, row_offset: usize) {
    for (i, mut row) in scores.outer_iter_mut().enumerate() {
        let allowed = mask.row(row_offset + i);
        let max = row
            .iter()
            .zip(allowed)
            .filter(|(_, &a)| a)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (v, &a) in row.iter_mut().zip(allowed) {
            *v = if a { (*v - max).exp() } else { 0.0 };
            sum += *v;
        }
        row /= sum;
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    norm1: NormCache,
    a1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    norm2: NormCache,
    a2: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
}

/// Contextualized states and everything backpropagation needs.
#[derive(Debug, Clone)]
pub struct Forward {
    pub states: Array2<f64>,
    pub source_len: usize,
    layers: Vec<LayerCache>,
    final_norm: NormCache,
}

impl Forward {
    pub fn source_states(&self) -> ArrayView2<'_, f64> {
        self.states.slice(s![..self.source_len, ..])
    }

    pub fn target_states(&self) -> ArrayView2<'_, f64> {
        self.states.slice(s![self.source_len.., ..])
    }

    /// Per-layer (keys, values) of the source rows.
    fn source_kv(&self) -> Vec<(Array2<f64>, Array2<f64>)> {
        let ns = self.source_len;
        self.layers
            .iter()
            .map(|c| (c.k.slice(s![..ns, ..]).to_owned(), c.v.slice(s![..ns, ..]).to_owned()))
            .collect()
    }
}

fn layer_forward(
    layer: &LayerParams,
    cfg: &ModelConfig,
    x: Array2<f64>,
    mask: &AttentionMask,
) -> (Array2<f64>, LayerCache) {
    let (n, d) = (x.nrows(), cfg.head_dim());
    let scale = 1.0 / (d as f64).sqrt();
    let (a1, norm1) = layer_norm(x.view(), &layer.ln1_gain, &layer.ln1_bias, cfg.layer_norm_eps);
    let q = linear(a1.view(), &layer.wq, &layer.bq);
    let k = linear(a1.view(), &layer.wk, &layer.bk);
    let v = linear(a1.view(), &layer.wv, &layer.bv);
    let mut ctx = Array2::zeros((n, cfg.hidden_dim));
    let mut probs = Vec::with_capacity(cfg.num_heads);
    for head in 0..cfg.num_heads {
        let cols = s![.., head * d..(head + 1) * d];
        let mut p = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        masked_softmax(&mut p, mask, 0);
        ctx.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        probs.push(p);
    }
    let mid = &x + &linear(ctx.view(), &layer.wo, &layer.bo);
    let (a2, norm2) = layer_norm(mid.view(), &layer.ln2_gain, &layer.ln2_bias, cfg.layer_norm_eps);
    let ff_pre = linear(a2.view(), &layer.w1, &layer.b1);
    let ff_act = ff_pre.mapv(gelu);
    let out = &mid + &linear(ff_act.view(), &layer.w2, &layer.b2);
    let cache = LayerCache {
        input: x,
        norm1,
        a1,
        q,
        k,
        v,
        probs,
        ctx,
        norm2,
        a2,
        ff_pre,
        ff_act,
    };
    (out, cache)
}

fn layer_backward(
    layer: &LayerParams,
    grads: &mut LayerParams,
    cfg: &ModelConfig,
    cache: &LayerCache,
    d_out: Array2<f64>,
) -> Array2<f64> {
    let d = cfg.head_dim();
    let scale = 1.0 / (d as f64).sqrt();

    // feedforward branch
    grads.w2 += &cache.ff_act.t().dot(&d_out);
    grads.b2 += &d_out.sum_axis(Axis(0));
    let mut d_ff = d_out.dot(&layer.w2.t());
    d_ff.zip_mut_with(&cache.ff_pre, |g, &x| *g *= gelu_grad(x));
    grads.w1 += &cache.a2.t().dot(&d_ff);
    grads.b1 += &d_ff.sum_axis(Axis(0));
    let d_a2 = d_ff.dot(&layer.w1.t());
    let mut d_mid = d_out;
    d_mid += &layer_norm_backward(
        &d_a2,
        &cache.norm2,
        &layer.ln2_gain,
        &mut grads.ln2_gain,
        &mut grads.ln2_bias,
    );

    // attention branch
    grads.wo += &cache.ctx.t().dot(&d_mid);
    grads.bo += &d_mid.sum_axis(Axis(0));
    let d_ctx = d_mid.dot(&layer.wo.t());
    let n = cache.input.nrows();
    let mut dq = Array2::zeros((n, cfg.hidden_dim));
    let mut dk = Array2::zeros((n, cfg.hidden_dim));
    let mut dv = Array2::zeros((n, cfg.hidden_dim));
    for (head, p) in cache.probs.iter().enumerate() {
        let cols = s![.., head * d..(head + 1) * d];
        let d_ctx_h = d_ctx.slice(cols);
        dv.slice_mut(cols).assign(&p.t().dot(&d_ctx_h));
        let mut d_scores = d_ctx_h.dot(&cache.v.slice(cols).t());
        for (mut ds, pr) in d_scores.outer_iter_mut().zip(p.outer_iter()) {
            let dot = ds.dot(&pr);
            ds.zip_mut_with(&pr, |g, &pv| *g = pv * (*g - dot) * scale);
        }
        dq.slice_mut(cols).assign(&d_scores.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&d_scores.t().dot(&cache.q.slice(cols)));
    }
    let a1t = cache.a1.t();
    grads.wq += &a1t.dot(&dq);
    grads.wk += &a1t.dot(&dk);
    grads.wv += &a1t.dot(&dv);
    grads.bq += &dq.sum_axis(Axis(0));
    grads.bk += &dk.sum_axis(Axis(0));
    grads.bv += &dv.sum_axis(Axis(0));
    let d_a1 = dq.dot(&layer.wq.t()) + dk.dot(&layer.wk.t()) + dv.dot(&layer.wv.t());
    let mut d_x = d_mid;
    d_x += &layer_norm_backward(
        &d_a1,
        &cache.norm1,
        &layer.ln1_gain,
        &mut grads.ln1_gain,
        &mut grads.ln1_bias,
    );
    d_x
}

/// Run the stack over a joint embedding sequence under `mask`.
pub fn forward(
    params: &Params,
    cfg: &ModelConfig,
    embeddings: Array2<f64>,
    mask: &AttentionMask,
) -> Result<Forward> {
    if embeddings.nrows() != mask.size() || embeddings.ncols() != cfg.hidden_dim {
        return Err(Error::Dimension(format!(
            "embeddings {:?} vs mask size {} and hidden_dim {}",
            embeddings.shape(),
            mask.size(),
            cfg.hidden_dim
        )));
    }
    if params.layers.len() != cfg.num_layers {
        return Err(Error::Dimension("layer count does not match config".into()));
    }
    let mut x = embeddings;
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for layer in &params.layers {
        let (out, cache) = layer_forward(layer, cfg, x, mask);
        layers.push(cache);
        x = out;
    }
    let (states, final_norm) =
        layer_norm(x.view(), &params.final_gain, &params.final_bias, cfg.layer_norm_eps);
    Ok(Forward {
        states,
        source_len: mask.source_len(),
        layers,
        final_norm,
    })
}

/// Backpropagate `d_states` through the stack, accumulating parameter
/// gradients into `grads`; returns the gradient w.r.t. the embeddings.
pub fn backward(
    params: &Params,
    cfg: &ModelConfig,
    fwd: &Forward,
    d_states: &Array2<f64>,
    grads: &mut Params,
) -> Array2<f64> {
    let mut d = layer_norm_backward(
        d_states,
        &fwd.final_norm,
        &params.final_gain,
        &mut grads.final_gain,
        &mut grads.final_bias,
    );
    for ((layer, g), cache) in params
        .layers
        .iter()
        .zip(grads.layers.iter_mut())
        .zip(&fwd.layers)
        .rev()
    {
        d = layer_backward(layer, g, cfg, cache, d);
    }
    d
}

/// Decoder with cached source keys/values: each [`IncrementalDecoder::step`]
/// feeds one target token and returns its final state, equal (up to rounding)
/// to the corresponding row of a full masked forward pass.
#[derive(Debug, Clone)]
pub struct IncrementalDecoder {
    source_ids: Vec<usize>,
    source_states: Array2<f64>,
    keys: Vec<Array2<f64>>,
    values: Vec<Array2<f64>>,
}

impl IncrementalDecoder {
    pub fn new(params: &Params, cfg: &ModelConfig, source_ids: &[usize]) -> Result<Self> {
        let emb = embed_source(params, source_ids)?;
        let fwd = forward(params, cfg, emb, &mask_for_lengths(source_ids.len(), 0))?;
        let (keys, values) = fwd.source_kv().into_iter().unzip();
        Ok(IncrementalDecoder {
            source_ids: source_ids.to_vec(),
            source_states: fwd.states,
            keys,
            values,
        })
    }

    pub fn source_states(&self) -> ArrayView2<'_, f64> {
        self.source_states.view()
    }

    /// Feed the target token pointing at source position `pointer`.
    pub fn step(&mut self, params: &Params, cfg: &ModelConfig, pointer: usize) -> Result<Array1<f64>> {
        let emb = embed_target(params, &self.source_ids, &[pointer])?;
        let d = cfg.head_dim();
        let scale = 1.0 / (d as f64).sqrt();
        let mut x = emb;
        for ((layer, keys), values) in params
            .layers
            .iter()
            .zip(self.keys.iter_mut())
            .zip(self.values.iter_mut())
        {
            let (a1, _) = layer_norm(x.view(), &layer.ln1_gain, &layer.ln1_bias, cfg.layer_norm_eps);
            let q = linear(a1.view(), &layer.wq, &layer.bq);
            let k = linear(a1.view(), &layer.wk, &layer.bk);
            let v = linear(a1.view(), &layer.wv, &layer.bv);
            keys.push_row(k.row(0)).expect("width matches");
            values.push_row(v.row(0)).expect("width matches");
            let mut ctx = Array2::zeros((1, cfg.hidden_dim));
            for head in 0..cfg.num_heads {
                let cols = s![.., head * d..(head + 1) * d];
                let mut p = q.slice(cols).dot(&keys.slice(cols).t()) * scale;
                let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                p.mapv_inplace(|z| (z - max).exp());
                let sum = p.sum();
                p /= sum;
                ctx.slice_mut(cols).assign(&p.dot(&values.slice(cols)));
            }
            let mid = &x + &linear(ctx.view(), &layer.wo, &layer.bo);
            let (a2, _) = layer_norm(mid.view(), &layer.ln2_gain, &layer.ln2_bias, cfg.layer_norm_eps);
            let ff = linear(a2.view(), &layer.w1, &layer.b1).mapv(gelu);
            x = &mid + &linear(ff.view(), &layer.w2, &layer.b2);
        }
        let (out, _) = layer_norm(x.view(), &params.final_gain, &params.final_bias, cfg.layer_norm_eps);
        Ok(out.row(0).to_owned())
    }
}

/// Dot-product pointer logits `z_j = y · x_j` over source states.
pub fn pointer_logits(target_state: ArrayView1<f64>, source_states: ArrayView2<f64>) -> Array1<f64> {
    source_states.dot(&target_state)
}
