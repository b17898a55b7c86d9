//! Encoder forward pass, analytic backward pass and prediction helpers.

use serde::{Deserialize, Serialize};

use super::tensor::{matmul, matmul_nt, matmul_tn_acc, Matrix};
use super::{LayerParams, TransformerConfig, TransformerParams};
use crate::class_weights::ClassWeights;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::wordpiece::Encoding;

const LN_EPS: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Numerically stable softmax, `exp(z - max z) / sum`.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: u8,
    pub probabilities: [f64; 2],
}

impl Prediction {
    /// Argmax with ties resolved to label 0.
    pub fn from_logits(logits: [f64; 2]) -> Self {
        let p = softmax(&logits);
        let probabilities = [p[0], p[1]];
        Self {
            label: u8::from(probabilities[1] > probabilities[0]),
            probabilities,
        }
    }

    pub fn confidence(&self) -> f64 {
        self.probabilities[0].max(self.probabilities[1])
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &Matrix, gain: &Matrix, shift: &Matrix) -> (Matrix, LayerNormCache) {
    let (rows, cols) = x.shape();
    let mut out = Matrix::zeros(rows, cols);
    let mut normalized = Matrix::zeros(rows, cols);
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(istd);
        for (c, v) in row.iter().enumerate() {
            let n = (v - mean) * istd;
            normalized.set(r, c, n);
            out.set(r, c, n * gain.data()[c] + shift.data()[c]);
        }
    }
    (out, LayerNormCache { normalized, inv_std })
}

fn layer_norm_backward(
    d_out: &Matrix,
    cache: &LayerNormCache,
    gain: &Matrix,
    d_gain: &mut Matrix,
    d_shift: &mut Matrix,
) -> Matrix {
    let (rows, cols) = d_out.shape();
    let mut d_x = Matrix::zeros(rows, cols);
    let mut d_norm = vec![0.0; cols];
    for r in 0..rows {
        let dy = d_out.row(r);
        let xn = cache.normalized.row(r);
        for c in 0..cols {
            d_gain.data_mut()[c] += dy[c] * xn[c];
            d_shift.data_mut()[c] += dy[c];
            d_norm[c] = dy[c] * gain.data()[c];
        }
        let mean_d = d_norm.iter().sum::<f64>() / cols as f64;
        let mean_dx = d_norm.iter().zip(xn).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
        let istd = cache.inv_std[r];
        for (c, dx) in d_x.row_mut(r).iter_mut().enumerate() {
            *dx = istd * (d_norm[c] - mean_d - xn[c] * mean_dx);
        }
    }
    d_x
}

fn linear(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut y = matmul(x, w);
    y.add_row_broadcast(b);
    y
}

/// Inverted-dropout mask (entries 0 or `1 / (1 - rate)`), or `None` when inactive.
fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: Option<&mut SplitMix64>) -> Option<Matrix> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = if rng.next_f64() < rate { 0.0 } else { keep };
    }
    Some(m)
}

fn apply_mask(x: &mut Matrix, mask: &Option<Matrix>) {
    if let Some(m) = mask {
        for (a, b) in x.data_mut().iter_mut().zip(m.data()) {
            *a *= b;
        }
    }
}

struct LayerCache {
    input: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Per head, `max_len x max_len` attention weights (zero on PAD keys).
    probs: Vec<Matrix>,
    context: Matrix,
    attn_dropout: Option<Matrix>,
    ln1: LayerNormCache,
    hidden1: Matrix,
    ff_pre: Matrix,
    ff_act: Matrix,
    ff_dropout: Option<Matrix>,
    ln2: LayerNormCache,
}

struct SequenceCache {
    ids: Vec<usize>,
    embed_dropout: Option<Matrix>,
    layers: Vec<LayerCache>,
    cls_hidden: Vec<f64>,
}

fn check_encoding(cfg: &TransformerConfig, enc: &Encoding) -> Result<()> {
    if enc.ids.len() != cfg.max_len || enc.attention_mask.len() != cfg.max_len {
        return Err(Error::Shape(format!(
            "encoding length {} does not match max_len {}",
            enc.ids.len(),
            cfg.max_len
        )));
    }
    if let Some(&bad) = enc.ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(Error::Shape(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)));
    }
    if enc.attention_mask.first() != Some(&1) {
        return Err(Error::Shape("first position must be attended".into()));
    }
    Ok(())
}

fn attention(cfg: &TransformerConfig, q: &Matrix, k: &Matrix, v: &Matrix, keys: &[usize]) -> (Vec<Matrix>, Matrix) {
    let len = q.rows();
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = Vec::with_capacity(cfg.n_heads);
    let mut context = Matrix::zeros(len, cfg.d_model);
    let mut scores = vec![0.0; keys.len()];
    for h in 0..cfg.n_heads {
        let cols = h * dh..(h + 1) * dh;
        let mut p = Matrix::zeros(len, len);
        for i in 0..len {
            let qi = &q.row(i)[cols.clone()];
            let mut max = f64::NEG_INFINITY;
            for (s, &j) in scores.iter_mut().zip(keys) {
                *s = scale * qi.iter().zip(&k.row(j)[cols.clone()]).map(|(a, b)| a * b).sum::<f64>();
                max = max.max(*s);
            }
            let mut total = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                total += *s;
            }
            for (s, &j) in scores.iter().zip(keys) {
                let w = s / total;
                p.set(i, j, w);
                let ctx = &mut context.row_mut(i)[cols.clone()];
                for (c, vj) in ctx.iter_mut().zip(&v.row(j)[cols.clone()]) {
                    *c += w * vj;
                }
            }
        }
        probs.push(p);
    }
    (probs, context)
}

fn layer_forward(
    cfg: &TransformerConfig,
    lp: &LayerParams,
    x: Matrix,
    keys: &[usize],
    mut rng: Option<&mut SplitMix64>,
) -> (Matrix, LayerCache) {
    let q = linear(&x, &lp.wq, &lp.bq);
    let k = linear(&x, &lp.wk, &lp.bk);
    let v = linear(&x, &lp.wv, &lp.bv);
    let (probs, context) = attention(cfg, &q, &k, &v, keys);
    let mut attn_out = linear(&context, &lp.wo, &lp.bo);
    let attn_dropout = dropout_mask(x.rows(), x.cols(), cfg.dropout_rate, rng.as_deref_mut());
    apply_mask(&mut attn_out, &attn_dropout);
    attn_out.add_assign(&x);
    let (hidden1, ln1) = layer_norm(&attn_out, &lp.ln1_gain, &lp.ln1_shift);

    let ff_pre = linear(&hidden1, &lp.w_ff1, &lp.b_ff1);
    let mut ff_act = ff_pre.clone();
    ff_act.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
    let mut ff_out = linear(&ff_act, &lp.w_ff2, &lp.b_ff2);
    let ff_dropout = dropout_mask(x.rows(), x.cols(), cfg.dropout_rate, rng);
    apply_mask(&mut ff_out, &ff_dropout);
    ff_out.add_assign(&hidden1);
    let (out, ln2) = layer_norm(&ff_out, &lp.ln2_gain, &lp.ln2_shift);
    (
        out,
        LayerCache {
            input: x,
            q,
            k,
            v,
            probs,
            context,
            attn_dropout,
            ln1,
            hidden1,
            ff_pre,
            ff_act,
            ff_dropout,
            ln2,
        },
    )
}

fn sequence_forward(
    params: &TransformerParams,
    enc: &Encoding,
    mut rng: Option<&mut SplitMix64>,
) -> Result<([f64; 2], SequenceCache)> {
    let cfg = &params.config;
    check_encoding(cfg, enc)?;
    let len = cfg.max_len;
    let ids: Vec<usize> = enc.ids.iter().map(|&i| i as usize).collect();
    let keys: Vec<usize> = (0..len).filter(|&j| enc.attention_mask[j] == 1).collect();

    let mut x = Matrix::zeros(len, cfg.d_model);
    for (pos, &id) in ids.iter().enumerate() {
        let row = x.row_mut(pos);
        for ((o, t), p) in row
            .iter_mut()
            .zip(params.token_embedding.row(id))
            .zip(params.position_embedding.row(pos))
        {
            *o = t + p;
        }
    }
    let embed_dropout = dropout_mask(len, cfg.d_model, cfg.dropout_rate, rng.as_deref_mut());
    apply_mask(&mut x, &embed_dropout);

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for lp in &params.layers {
        let (out, cache) = layer_forward(cfg, lp, x, &keys, rng.as_deref_mut());
        layers.push(cache);
        x = out;
    }
    let cls_hidden = x.row(0).to_vec();
    let mut logits = [0.0; 2];
    for (c, logit) in logits.iter_mut().enumerate() {
        *logit = params.classifier_b.data()[c]
            + cls_hidden
                .iter()
                .enumerate()
                .map(|(r, h)| h * params.classifier_w.get(r, c))
                .sum::<f64>();
    }
    Ok((
        logits,
        SequenceCache {
            ids,
            embed_dropout,
            layers,
            cls_hidden,
        },
    ))
}

fn layer_backward(
    cfg: &TransformerConfig,
    lp: &LayerParams,
    cache: &LayerCache,
    d_out: &Matrix,
    grads: &mut LayerParams,
) -> Matrix {
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let len = d_out.rows();

    let d_res2 = layer_norm_backward(d_out, &cache.ln2, &lp.ln2_gain, &mut grads.ln2_gain, &mut grads.ln2_shift);
    let mut d_hidden1 = d_res2.clone();
    let mut d_ff_out = d_res2;
    apply_mask(&mut d_ff_out, &cache.ff_dropout);
    matmul_tn_acc(&cache.ff_act, &d_ff_out, &mut grads.w_ff2);
    d_ff_out.accumulate_column_sums(&mut grads.b_ff2);
    let mut d_ff_pre = matmul_nt(&d_ff_out, &lp.w_ff2);
    for (d, x) in d_ff_pre.data_mut().iter_mut().zip(cache.ff_pre.data()) {
        *d *= gelu_grad(*x);
    }
    matmul_tn_acc(&cache.hidden1, &d_ff_pre, &mut grads.w_ff1);
    d_ff_pre.accumulate_column_sums(&mut grads.b_ff1);
    d_hidden1.add_assign(&matmul_nt(&d_ff_pre, &lp.w_ff1));

    let d_res1 = layer_norm_backward(&d_hidden1, &cache.ln1, &lp.ln1_gain, &mut grads.ln1_gain, &mut grads.ln1_shift);
    let mut d_x = d_res1.clone();
    let mut d_attn_out = d_res1;
    apply_mask(&mut d_attn_out, &cache.attn_dropout);
    matmul_tn_acc(&cache.context, &d_attn_out, &mut grads.wo);
    d_attn_out.accumulate_column_sums(&mut grads.bo);
    let d_context = matmul_nt(&d_attn_out, &lp.wo);

    let mut d_q = Matrix::zeros(len, cfg.d_model);
    let mut d_k = Matrix::zeros(len, cfg.d_model);
    let mut d_v = Matrix::zeros(len, cfg.d_model);
    let mut d_p = vec![0.0; len];
    for (h, probs) in cache.probs.iter().enumerate() {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..len {
            let dc = &d_context.row(i)[cols.clone()];
            let p_row = probs.row(i);
            let mut weighted = 0.0;
            for j in 0..len {
                if p_row[j] == 0.0 {
                    d_p[j] = 0.0;
                    continue;
                }
                d_p[j] = dc.iter().zip(&cache.v.row(j)[cols.clone()]).map(|(a, b)| a * b).sum();
                weighted += p_row[j] * d_p[j];
                for (dv, g) in d_v.row_mut(j)[cols.clone()].iter_mut().zip(dc) {
                    *dv += p_row[j] * g;
                }
            }
            for j in 0..len {
                if p_row[j] == 0.0 {
                    continue;
                }
                let d_score = p_row[j] * (d_p[j] - weighted) * scale;
                for c in cols.clone() {
                    d_q.data_mut()[i * cfg.d_model + c] += d_score * cache.k.get(j, c);
                    d_k.data_mut()[j * cfg.d_model + c] += d_score * cache.q.get(i, c);
                }
            }
        }
    }
    for (d, w, gw, gb) in [
        (&d_q, &lp.wq, &mut grads.wq, &mut grads.bq),
        (&d_k, &lp.wk, &mut grads.wk, &mut grads.bk),
        (&d_v, &lp.wv, &mut grads.wv, &mut grads.bv),
    ] {
        matmul_tn_acc(&cache.input, d, gw);
        d.accumulate_column_sums(gb);
        d_x.add_assign(&matmul_nt(d, w));
    }
    d_x
}

/// Accumulates parameter gradients for one sequence given `d loss / d logits`.
fn sequence_backward(params: &TransformerParams, cache: &SequenceCache, d_logits: [f64; 2], grads: &mut TransformerParams) {
    let cfg = &params.config;
    let mut d_x = Matrix::zeros(cfg.max_len, cfg.d_model);
    for (c, &dl) in d_logits.iter().enumerate() {
        grads.classifier_b.data_mut()[c] += dl;
        for r in 0..cfg.d_model {
            let g = grads.classifier_w.get(r, c) + cache.cls_hidden[r] * dl;
            grads.classifier_w.set(r, c, g);
        }
    }
    for (r, d) in d_x.row_mut(0).iter_mut().enumerate() {
        *d = (0..2).map(|c| params.classifier_w.get(r, c) * d_logits[c]).sum();
    }
    for ((lp, lc), lg) in params.layers.iter().zip(&cache.layers).zip(grads.layers.iter_mut()).rev() {
        d_x = layer_backward(cfg, lp, lc, &d_x, lg);
    }
    apply_mask(&mut d_x, &cache.embed_dropout);
    for (pos, &id) in cache.ids.iter().enumerate() {
        let d_row = d_x.row(pos);
        for (g, d) in grads.token_embedding.row_mut(id).iter_mut().zip(d_row) {
            *g += d;
        }
        for (g, d) in grads.position_embedding.row_mut(pos).iter_mut().zip(d_row) {
            *g += d;
        }
    }
}

/// Logits for every encoding in the batch (inference mode, no dropout).
pub fn forward(params: &TransformerParams, batch: &[Encoding]) -> Result<Vec<[f64; 2]>> {
    batch
        .iter()
        .map(|enc| sequence_forward(params, enc, None).map(|(logits, _)| logits))
        .collect()
}

/// Attention weights `[layer][head]`, each `max_len x max_len` (rows = queries).
pub fn attention_maps(params: &TransformerParams, enc: &Encoding) -> Result<Vec<Vec<Matrix>>> {
    let (_, cache) = sequence_forward(params, enc, None)?;
    Ok(cache.layers.into_iter().map(|l| l.probs).collect())
}

fn weighted_cross_entropy(logits: [f64; 2], label: u8, weight: f64) -> (f64, [f64; 2]) {
    let max = logits[0].max(logits[1]);
    let log_sum = max + ((logits[0] - max).exp() + (logits[1] - max).exp()).ln();
    let y = label as usize;
    let loss = weight * (log_sum - logits[y]);
    let p = softmax(&logits);
    let mut d = [weight * p[0], weight * p[1]];
    d[y] -= weight;
    (loss, d)
}

/// Class-weighted mean cross-entropy over the batch and its gradient.
///
/// `rng` enables dropout (when the config's rate is non-zero).
pub fn loss_and_grads_with(
    params: &TransformerParams,
    batch: &[Encoding],
    labels: &[u8],
    class_weights: &ClassWeights,
    mut rng: Option<&mut SplitMix64>,
) -> Result<(f64, TransformerParams)> {
    if batch.len() != labels.len() || batch.is_empty() {
        return Err(Error::Shape(format!("{} encodings vs {} labels", batch.len(), labels.len())));
    }
    let n = batch.len() as f64;
    let mut grads = TransformerParams::zeros(&params.config);
    let mut loss = 0.0;
    for (enc, &label) in batch.iter().zip(labels) {
        if label > 1 {
            return Err(Error::InvalidArgument(format!("label {label} is not 0 or 1")));
        }
        let (logits, cache) = sequence_forward(params, enc, rng.as_deref_mut())?;
        let (l, d) = weighted_cross_entropy(logits, label, class_weights.get(label));
        loss += l;
        sequence_backward(params, &cache, [d[0] / n, d[1] / n], &mut grads);
    }
    Ok((loss / n, grads))
}

pub fn loss_and_grads(
    params: &TransformerParams,
    batch: &[Encoding],
    labels: &[u8],
    class_weights: &ClassWeights,
) -> Result<(f64, TransformerParams)> {
    loss_and_grads_with(params, batch, labels, class_weights, None)
}

/// Class-weighted mean cross-entropy without gradients.
pub fn batch_loss(
    params: &TransformerParams,
    batch: &[Encoding],
    labels: &[u8],
    class_weights: &ClassWeights,
) -> Result<f64> {
    if batch.len() != labels.len() || batch.is_empty() {
        return Err(Error::Shape(format!("{} encodings vs {} labels", batch.len(), labels.len())));
    }
    let logits = forward(params, batch)?;
    let total: f64 = logits
        .into_iter()
        .zip(labels)
        .map(|(z, &y)| weighted_cross_entropy(z, y, class_weights.get(y)).0)
        .sum();
    Ok(total / batch.len() as f64)
}
