//! Loss and exact reverse-mode gradients for every parameter.

use ndarray::{s, Array1, Array2, Array3, Axis};

use super::forward::{ForwardCache, LnCache};
use super::{Batch, Gradients, Model, ModelError};

/// Mean cross-entropy over positions with `label != -1`, and its gradient
/// with respect to the logits. The gradient is exactly zero at unlabeled
/// positions.
pub fn mlm_loss(
    logits: &Array3<f64>,
    labels: &Array2<i64>,
) -> Result<(f64, Array3<f64>), ModelError> {
    let (b, t, v) = logits.dim();
    if labels.dim() != (b, t) {
        return Err(ModelError::BadBatch(format!(
            "labels {:?} vs logits {:?}",
            labels.dim(),
            logits.dim()
        )));
    }
    let n_labeled = labels.iter().filter(|&&l| l >= 0).count();
    if n_labeled == 0 {
        return Err(ModelError::NoLabels);
    }
    let inv_n = 1.0 / n_labeled as f64;
    let mut loss = 0.0;
    let mut dlogits = Array3::zeros((b, t, v));
    for bi in 0..b {
        for ti in 0..t {
            let label = labels[[bi, ti]];
            if label < 0 {
                continue;
            }
            let label = label as usize;
            let row = logits.slice(s![bi, ti, ..]);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row.iter().map(|&x| (x - max).exp()).sum();
            let lse = max + sum_exp.ln();
            loss += (lse - row[label]) * inv_n;
            let mut drow = dlogits.slice_mut(s![bi, ti, ..]);
            for j in 0..v {
                drow[j] = (row[j] - lse).exp() * inv_n;
            }
            drow[label] -= inv_n;
        }
    }
    Ok((loss, dlogits))
}

fn ln_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gain: &Array1<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let (rows, d) = dy.dim();
    let mut dx = Array2::zeros((rows, d));
    let mut dgain = Array1::zeros(d);
    let mut dbias = Array1::zeros(d);
    for r in 0..rows {
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for c in 0..d {
            let dxhat = dy[[r, c]] * gain[c];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * cache.xhat[[r, c]];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let istd = cache.inv_std[r];
        for c in 0..d {
            let dxhat = dy[[r, c]] * gain[c];
            dx[[r, c]] = istd * (dxhat - mean_dxhat - cache.xhat[[r, c]] * mean_dxhat_xhat);
            dgain[c] += dy[[r, c]] * cache.xhat[[r, c]];
            dbias[c] += dy[[r, c]];
        }
    }
    (dx, dgain, dbias)
}

/// Backpropagate `dlogits` through the cached forward graph, producing
/// gradients with the same shapes as the parameters. The cache must come from
/// `forward` on the same model and batch.
pub fn backward(
    model: &Model,
    batch: &Batch,
    cache: &ForwardCache,
    dlogits: &Array3<f64>,
) -> Result<Gradients, ModelError> {
    let (b, t) = cache.batch_dims;
    let v = model.config.vocab_size;
    let d = model.config.d_model;
    if dlogits.dim() != (b, t, v) {
        return Err(ModelError::BadBatch(format!(
            "dlogits {:?}, expected {:?}",
            dlogits.dim(),
            (b, t, v)
        )));
    }
    let n_heads = model.config.n_heads;
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut grads = Model::zeros(model.config.clone());
    let dlogits_2d = dlogits
        .to_owned()
        .into_shape_with_order((b * t, v))
        .expect("dlogits reshape");

    // Output head (weight-tied): logits = h_final . E^T + output_bias.
    grads.output_bias = dlogits_2d.sum_axis(Axis(0));
    grads.token_embedding = dlogits_2d.t().dot(&cache.h_final);
    let dh_final = dlogits_2d.dot(&model.token_embedding);

    let (mut dx, dgain, dbias) = ln_backward(&dh_final, &cache.final_ln, &model.final_ln_gain);
    grads.final_ln_gain = dgain;
    grads.final_ln_bias = dbias;

    for (li, layer) in model.layers.iter().enumerate().rev() {
        let lc = &cache.layers[li];
        let g = &mut grads.layers[li];

        // x_next = resid1 + ffn_act . W2 + b2
        let d_ffn_out = &dx;
        let d_act = d_ffn_out.dot(&layer.w2.t());
        g.w2 = lc.ffn_act.t().dot(d_ffn_out);
        g.b2 = d_ffn_out.sum_axis(Axis(0));
        let mut d_pre = d_act;
        d_pre.zip_mut_with(&lc.ffn_pre, |dv, &pre| *dv *= super::gelu_grad(pre));
        g.w1 = lc.a2.t().dot(&d_pre);
        g.b1 = d_pre.sum_axis(Axis(0));
        let d_a2 = d_pre.dot(&layer.w1.t());

        let (d_resid1_ln, dg2, db2) = ln_backward(&d_a2, &lc.ln2, &layer.ln2_gain);
        g.ln2_gain = dg2;
        g.ln2_bias = db2;
        let d_resid1 = &dx + &d_resid1_ln;

        // resid1 = x_in + ctx . Wo
        let d_attn_out = &d_resid1;
        g.wo = lc.ctx.t().dot(d_attn_out);
        let d_ctx = d_attn_out.dot(&layer.wo.t());

        let mut dq = Array2::zeros((b * t, d));
        let mut dk = Array2::zeros((b * t, d));
        let mut dv = Array2::zeros((b * t, d));
        for bi in 0..b {
            for h in 0..n_heads {
                let rows = s![bi * t..(bi + 1) * t, h * dh..(h + 1) * dh];
                let probs = &lc.probs[bi * n_heads + h];
                let d_ctx_h = d_ctx.slice(rows);
                let vh = lc.v.slice(rows);
                let qh = lc.q.slice(rows);
                let kh = lc.k.slice(rows);

                let dprobs = d_ctx_h.dot(&vh.t());
                dv.slice_mut(rows).assign(&probs.t().dot(&d_ctx_h));

                // Softmax backward: ds = p * (dp - sum_j dp_j p_j), masked
                // cells have p = 0 and receive exactly zero gradient.
                let mut dscores = Array2::zeros((t, t));
                for i in 0..t {
                    let mut dot = 0.0;
                    for j in 0..t {
                        dot += dprobs[[i, j]] * probs[[i, j]];
                    }
                    for j in 0..t {
                        dscores[[i, j]] = probs[[i, j]] * (dprobs[[i, j]] - dot) * scale;
                    }
                }
                dq.slice_mut(rows).assign(&dscores.dot(&kh));
                dk.slice_mut(rows).assign(&dscores.t().dot(&qh));
            }
        }
        g.wq = lc.a1.t().dot(&dq);
        g.wk = lc.a1.t().dot(&dk);
        g.wv = lc.a1.t().dot(&dv);
        let d_a1 = dq.dot(&layer.wq.t()) + dk.dot(&layer.wk.t()) + dv.dot(&layer.wv.t());

        let (d_x_ln, dg1, db1) = ln_backward(&d_a1, &lc.ln1, &layer.ln1_gain);
        g.ln1_gain = dg1;
        g.ln1_bias = db1;
        dx = &d_resid1 + &d_x_ln;
    }

    // Embedding lookup: x0[b*t+t'] = E[id] + P[t'].
    for bi in 0..b {
        for ti in 0..t {
            let row = bi * t + ti;
            let id = batch.input_ids[[bi, ti]];
            for c in 0..d {
                grads.token_embedding[[id, c]] += dx[[row, c]];
                grads.position_embedding[[ti, c]] += dx[[row, c]];
            }
        }
    }

    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::super::{forward, Batch, Model, ModelConfig};
    use super::*;
    use ndarray::Array2;

    fn config(d: usize, v: usize, t: usize) -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: d,
            n_heads: 2,
            d_ffn: 2 * d,
            max_len: t.max(4),
            vocab_size: v,
            seed: 1234,
        }
    }

    fn toy_batch(v: usize) -> Batch {
        // Two sequences with different lengths; second padded.
        let ids = Array2::from_shape_vec(
            (2, 6),
            vec![2, 5, 6, 7, 3, 0, 2, 8, 9, 3, 0, 0].iter().map(|&x| x % v).collect(),
        )
        .unwrap();
        let mask = Array2::from_shape_vec(
            (2, 6),
            vec![
                true, true, true, true, true, false, true, true, true, true, false, false,
            ],
        )
        .unwrap();
        let mut labels = Array2::from_elem((2, 6), -1i64);
        labels[[0, 1]] = (9 % v) as i64;
        labels[[0, 3]] = (4 % v) as i64;
        labels[[1, 2]] = (7 % v) as i64;
        Batch {
            input_ids: ids,
            attention_mask: mask,
            labels,
        }
    }

    #[test]
    fn uniform_logits_give_ln_v() {
        let v = 50;
        let logits = Array3::from_elem((1, 4, v), 0.37);
        let mut labels = Array2::from_elem((1, 4), -1i64);
        labels[[0, 1]] = 12;
        labels[[0, 2]] = 3;
        let (loss, dlogits) = mlm_loss(&logits, &labels).unwrap();
        assert!((loss - (v as f64).ln()).abs() < 1e-12);
        // Unlabeled positions get exactly zero gradient.
        assert!(dlogits.slice(s![0, 0, ..]).iter().all(|&g| g == 0.0));
        assert!(dlogits.slice(s![0, 3, ..]).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_position_matches_hand_computation() {
        // One labeled position, vocab 3, logits [2.0, -1.0, 0.5], label 0.
        let mut logits = Array3::zeros((1, 1, 3));
        logits[[0, 0, 0]] = 2.0;
        logits[[0, 0, 1]] = -1.0;
        logits[[0, 0, 2]] = 0.5;
        let labels = Array2::from_elem((1, 1), 0i64);
        let (loss, dlogits) = mlm_loss(&logits, &labels).unwrap();
        let z = (2.0f64).exp() + (-1.0f64).exp() + (0.5f64).exp();
        let expected = z.ln() - 2.0;
        assert!((loss - expected).abs() < 1e-12);
        let p0 = (2.0f64).exp() / z;
        assert!((dlogits[[0, 0, 0]] - (p0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn no_labels_is_an_error() {
        let logits = Array3::zeros((1, 3, 10));
        let labels = Array2::from_elem((1, 3), -1i64);
        assert!(matches!(
            mlm_loss(&logits, &labels),
            Err(ModelError::NoLabels)
        ));
    }

    #[test]
    fn zero_upstream_gives_exactly_zero_gradients() {
        let cfg = config(16, 30, 6);
        let model = Model::init(&cfg).unwrap();
        let batch = toy_batch(30);
        let (_, cache) = forward(&model, &batch).unwrap();
        let dlogits = Array3::zeros((2, 6, 30));
        let grads = backward(&model, &batch, &cache, &dlogits).unwrap();
        for (name, slice) in grads.param_slices() {
            assert!(slice.iter().all(|&g| g == 0.0), "nonzero grad in {name}");
        }
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let cfg = config(16, 30, 6);
        let model = Model::init(&cfg).unwrap();
        let batch = toy_batch(30);
        let (logits, cache) = forward(&model, &batch).unwrap();
        let (_, dlogits) = mlm_loss(&logits, &batch.labels).unwrap();
        let g1 = backward(&model, &batch, &cache, &dlogits).unwrap();
        let doubled = dlogits.mapv(|x| 2.0 * x);
        let g2 = backward(&model, &batch, &cache, &doubled).unwrap();
        for ((_, a), (_, b)) in g1.param_slices().iter().zip(g2.param_slices().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_on_small_model() {
        let cfg = config(8, 20, 6);
        let model = Model::init(&cfg).unwrap();
        let batch = toy_batch(20);

        let loss_of = |m: &Model| {
            let (logits, _) = forward(m, &batch).unwrap();
            mlm_loss(&logits, &batch.labels).unwrap().0
        };
        let (logits, cache) = forward(&model, &batch).unwrap();
        let (_, dlogits) = mlm_loss(&logits, &batch.labels).unwrap();
        let grads = backward(&model, &batch, &cache, &dlogits).unwrap();

        let h = 1e-5;
        let names: Vec<String> = model.param_slices().iter().map(|(n, _)| n.clone()).collect();
        let mut worst: f64 = 0.0;
        for (tensor_idx, name) in names.iter().enumerate() {
            let len = model.param_slices()[tensor_idx].1.len();
            // Probe a few spread-out entries per tensor.
            for probe in 0..3.min(len) {
                let idx = probe * (len / 3.min(len)).max(1) % len;
                let mut plus = model.clone();
                plus.param_slices_mut()[tensor_idx].1[idx] += h;
                let mut minus = model.clone();
                minus.param_slices_mut()[tensor_idx].1[idx] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let an = grads.param_slices()[tensor_idx].1[idx];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-4);
                assert!(rel < 1e-4, "tensor {name}[{idx}]: analytic {an}, fd {fd}");
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4);
    }
}
