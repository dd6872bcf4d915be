//! Forward pass with cached activations for the backward pass.
//!
//! Layout convention: sequence activations are stored as `(B*T, d)` matrices
//! with row index `b * T + t`; per-head attention work slices those rows back
//! into `(T, head_dim)` views. Padded key positions are masked to -inf before
//! the softmax, so they cannot influence any real position's output.

use ndarray::{s, Array1, Array2, Array3};

use super::{Batch, LayerParams, Model, ModelError, LN_EPS};

pub(crate) struct LnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

pub(crate) struct LayerCache {
    pub ln1: LnCache,
    pub a1: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Attention probabilities, one (T, T) matrix per (batch, head) pair,
    /// indexed `b * n_heads + h`.
    pub probs: Vec<Array2<f64>>,
    pub ctx: Array2<f64>,
    pub ln2: LnCache,
    pub a2: Array2<f64>,
    pub ffn_pre: Array2<f64>,
    pub ffn_act: Array2<f64>,
}

/// Activations needed by [`super::backward`].
pub struct ForwardCache {
    pub(crate) layers: Vec<LayerCache>,
    pub(crate) final_ln: LnCache,
    pub(crate) h_final: Array2<f64>,
    pub(crate) batch_dims: (usize, usize),
}

pub(crate) fn ln_forward(
    x: &Array2<f64>,
    gain: &Array1<f64>,
    bias: &Array1<f64>,
) -> (Array2<f64>, LnCache) {
    let (rows, d) = x.dim();
    let mut xhat = Array2::zeros((rows, d));
    let mut inv_std = Array1::zeros(rows);
    let mut y = Array2::zeros((rows, d));
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = istd;
        for c in 0..d {
            let xh = (x[[r, c]] - mean) * istd;
            xhat[[r, c]] = xh;
            y[[r, c]] = xh * gain[c] + bias[c];
        }
    }
    (y, LnCache { xhat, inv_std })
}

/// Row-wise softmax of masked attention scores. `key_mask[j] == false` means
/// key `j` is padding and is excluded exactly.
fn masked_softmax_rows(scores: &mut Array2<f64>, key_mask: &[bool]) {
    let (t, _) = scores.dim();
    for i in 0..t {
        let mut row = scores.row_mut(i);
        for (j, &real) in key_mask.iter().enumerate() {
            if !real {
                row[j] = f64::NEG_INFINITY;
            }
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

struct AttentionOut {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    out: Array2<f64>,
}

fn attention(layer: &LayerParams, a1: &Array2<f64>, batch: &Batch, n_heads: usize) -> AttentionOut {
    let (b, t) = batch.input_ids.dim();
    let d = a1.ncols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let q = a1.dot(&layer.wq);
    let k = a1.dot(&layer.wk);
    let v = a1.dot(&layer.wv);

    let mut probs = Vec::with_capacity(b * n_heads);
    let mut ctx = Array2::zeros((b * t, d));
    for bi in 0..b {
        let key_mask: Vec<bool> = (0..t).map(|j| batch.attention_mask[[bi, j]]).collect();
        for h in 0..n_heads {
            let rows = s![bi * t..(bi + 1) * t, h * dh..(h + 1) * dh];
            let qh = q.slice(rows);
            let kh = k.slice(rows);
            let vh = v.slice(rows);
            let mut scores = qh.dot(&kh.t());
            scores.mapv_inplace(|x| x * scale);
            masked_softmax_rows(&mut scores, &key_mask);
            let ctx_h = scores.dot(&vh);
            ctx.slice_mut(rows).assign(&ctx_h);
            probs.push(scores);
        }
    }
    let out = ctx.dot(&layer.wo);
    AttentionOut {
        q,
        k,
        v,
        probs,
        ctx,
        out,
    }
}

/// Full forward pass: token + position embeddings, `n_layers` pre-LN
/// attention/FFN blocks, final layer norm, and weight-tied vocabulary logits.
pub fn forward(model: &Model, batch: &Batch) -> Result<(Array3<f64>, ForwardCache), ModelError> {
    batch.validate(&model.config)?;
    let (b, t) = batch.input_ids.dim();
    let d = model.config.d_model;

    let mut x = Array2::zeros((b * t, d));
    for bi in 0..b {
        for ti in 0..t {
            let id = batch.input_ids[[bi, ti]];
            let row = bi * t + ti;
            for c in 0..d {
                x[[row, c]] = model.token_embedding[[id, c]] + model.position_embedding[[ti, c]];
            }
        }
    }

    let mut layer_caches = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let x_in = x;
        let (a1, ln1) = ln_forward(&x_in, &layer.ln1_gain, &layer.ln1_bias);
        let attn = attention(layer, &a1, batch, model.config.n_heads);
        let resid1 = &x_in + &attn.out;
        let (a2, ln2) = ln_forward(&resid1, &layer.ln2_gain, &layer.ln2_bias);
        let ffn_pre = a2.dot(&layer.w1) + &layer.b1;
        let ffn_act = ffn_pre.mapv(super::gelu);
        let ffn_out = ffn_act.dot(&layer.w2) + &layer.b2;
        x = &resid1 + &ffn_out;
        layer_caches.push(LayerCache {
            ln1,
            a1,
            q: attn.q,
            k: attn.k,
            v: attn.v,
            probs: attn.probs,
            ctx: attn.ctx,
            ln2,
            a2,
            ffn_pre,
            ffn_act,
        });
    }

    let (h_final, final_ln) = ln_forward(&x, &model.final_ln_gain, &model.final_ln_bias);
    let logits_2d = h_final.dot(&model.token_embedding.t()) + &model.output_bias;
    let logits = logits_2d
        .into_shape_with_order((b, t, model.config.vocab_size))
        .expect("logits reshape");

    Ok((
        logits,
        ForwardCache {
            layers: layer_caches,
            final_ln,
            h_final,
            batch_dims: (b, t),
        },
    ))
}

/// Mean of final hidden states over non-padded positions: one sentence vector
/// per batch row.
pub fn mean_pool(model: &Model, batch: &Batch) -> Result<Array2<f64>, ModelError> {
    let (_, cache) = forward(model, batch)?;
    let (b, t) = cache.batch_dims;
    let d = model.config.d_model;
    let mut pooled = Array2::zeros((b, d));
    for bi in 0..b {
        let mut count = 0.0;
        for ti in 0..t {
            if batch.attention_mask[[bi, ti]] {
                count += 1.0;
                for c in 0..d {
                    pooled[[bi, c]] += cache.h_final[[bi * t + ti, c]];
                }
            }
        }
        if count > 0.0 {
            for c in 0..d {
                pooled[[bi, c]] /= count;
            }
        }
    }
    Ok(pooled)
}
