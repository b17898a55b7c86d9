//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use essay_scoring::logreg::{self, LogRegHyper, LogRegModel};
use essay_scoring::rng::SplitMix64;
use essay_scoring::transformer::{self, init_params, TransformerConfig, TransformerParams};
use essay_scoring::wordpiece::{Encoding, Vocabulary, CLS, PAD, SEP, UNK};
use essay_scoring::ClassWeights;

/// Central finite difference of `f` with respect to each coordinate of `x`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Below this norm a central difference with h = 1e-6 cannot tell a gradient
/// from zero (one ulp of an O(1) loss over 2h is about 1e-10 per entry).
pub const GRADIENT_FLOOR: f64 = 1e-8;

/// `||a - n|| / (||a|| + ||n||)`, zero when both are below [`GRADIENT_FLOOR`].
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let denom = norm(analytic) + norm(numeric);
    if denom < GRADIENT_FLOOR {
        0.0
    } else {
        norm(&diff) / denom
    }
}

/// Pairwise ROC AUC: `(2 * wins + ties) / (2 * P * N)` over all positive/negative pairs.
pub fn brute_force_auc(y: &[u8], scores: &[f64]) -> f64 {
    let mut twice = 0u64;
    let mut pairs = 0u64;
    for (i, &yi) in y.iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in y.iter().enumerate() {
            if yj != 0 {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                twice += 2;
            } else if scores[i] == scores[j] {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

/// Textbook formulas on `[[tn, fp], [fn, tp]]`: accuracy, F1 = 2PR/(P+R),
/// (sensitivity + specificity) / 2 and Cohen's kappa from p_o and p_e.
pub fn textbook_metrics(cm: [[u64; 2]; 2]) -> (f64, f64, f64, f64) {
    let [[tn, fp], [fn_, tp]] = cm.map(|r| r.map(|v| v as f64));
    let n = tn + fp + fn_ + tp;
    let accuracy = (tn + tp) / n;
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fn_);
    let f1 = 2.0 * precision * recall / (precision + recall);
    let auc = (tp / (tp + fn_) + tn / (tn + fp)) / 2.0;
    let p_o = accuracy;
    let p_e = ((tn + fp) / n) * ((tn + fn_) / n) + ((fn_ + tp) / n) * ((fp + tp) / n);
    let kappa = (p_o - p_e) / (1.0 - p_e);
    (accuracy, f1, auc, kappa)
}

/// Greedy longest-match segmentation by trying every prefix length from the
/// longest down, one word at a time.
pub fn naive_greedy(word: &str, vocab: &[&str]) -> Option<Vec<String>> {
    let chars: Vec<char> = word.chars().collect();
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut found = None;
        for end in (start + 1..=chars.len()).rev() {
            let body: String = chars[start..end].iter().collect();
            let piece = if start == 0 { body } else { format!("##{body}") };
            if vocab.contains(&piece.as_str()) {
                found = Some((end, piece));
                break;
            }
        }
        let (end, piece) = found?;
        pieces.push(piece);
        start = end;
    }
    Some(pieces)
}

pub fn vocab_from(pieces: &[&str]) -> Vocabulary {
    let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP].iter().map(|s| s.to_string()).collect();
    tokens.extend(pieces.iter().map(|s| s.to_string()));
    Vocabulary::from_tokens(tokens).unwrap()
}

pub fn tiny_config() -> TransformerConfig {
    TransformerConfig {
        vocab_size: 12,
        max_len: 6,
        d_model: 4,
        n_heads: 1,
        n_layers: 1,
        d_ff: 8,
        n_labels: 2,
        dropout_rate: 0.0,
    }
}

/// Random encoding with `CLS ... SEP PAD*` layout over ids `4..vocab_size`.
pub fn random_encoding(rng: &mut SplitMix64, vocab_size: usize, max_len: usize) -> Encoding {
    let true_length = 2 + rng.below((max_len - 1) as u64) as usize;
    let mut ids = vec![0u32; max_len];
    ids[0] = 2;
    for id in ids.iter_mut().take(true_length - 1).skip(1) {
        *id = 4 + rng.below((vocab_size - 4) as u64) as u32;
    }
    ids[true_length - 1] = 3;
    let attention_mask = (0..max_len).map(|i| u8::from(i < true_length)).collect();
    Encoding {
        ids,
        attention_mask,
        true_length,
    }
}

/// Parameters from the seeded initializer with every gain, bias and shift
/// perturbed so that no tensor sits at a special point.
pub fn random_params(config: &TransformerConfig, seed: u64) -> TransformerParams {
    let mut params = init_params(config, seed).unwrap();
    let mut rng = SplitMix64::new(seed ^ 0x5eed);
    for (_, m) in params.tensors_mut() {
        for v in m.data_mut() {
            *v += rng.symmetric(0.3);
        }
    }
    params
}

pub fn flatten(params: &TransformerParams) -> Vec<(String, Vec<f64>)> {
    params
        .tensors()
        .into_iter()
        .map(|(name, m)| (name, m.data().to_vec()))
        .collect()
}

/// Per-tensor relative error between the analytic transformer
/// gradient and central differences at one random point.
pub fn transformer_gradient_error(seed: u64, h: f64) -> Vec<(String, f64)> {
    let config = tiny_config();
    let params = random_params(&config, seed);
    let mut rng = SplitMix64::new(seed.wrapping_mul(31) + 7);
    let batch: Vec<Encoding> = (0..3).map(|_| random_encoding(&mut rng, config.vocab_size, config.max_len)).collect();
    let labels = [0u8, 1, 1];
    let weights = ClassWeights::new(2.5, 1.0).unwrap();
    let (_, grads) = transformer::loss_and_grads(&params, &batch, &labels, &weights).unwrap();
    let analytic = flatten(&grads);
    let names: Vec<String> = analytic.iter().map(|(n, _)| n.clone()).collect();
    let mut out = Vec::new();
    for (t, name) in names.iter().enumerate() {
        let base: Vec<f64> = params.tensors()[t].1.data().to_vec();
        let numeric = numeric_gradient(&base, h, |x| {
            let mut p = params.clone();
            p.tensors_mut()[t].1.data_mut().copy_from_slice(x);
            transformer::model::batch_loss(&p, &batch, &labels, &weights).unwrap()
        });
        out.push((name.clone(), relative_error(&analytic[t].1, &numeric)));
    }
    out
}

/// Relative error of the logistic-regression gradient at one random point.
pub fn logreg_gradient_error(seed: u64, h: f64) -> f64 {
    let mut rng = SplitMix64::new(seed);
    let (n, d) = (25, 3);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.symmetric(2.0)).collect()).collect();
    let y: Vec<u8> = (0..n).map(|i| u8::from(i % 3 != 0)).collect();
    let weights = ClassWeights::new(0.5 + rng.next_f64() * 3.0, 0.5 + rng.next_f64()).unwrap();
    let hyper = LogRegHyper {
        l2_lambda: if seed.is_multiple_of(2) { 0.0 } else { 0.05 },
        ..LogRegHyper::default()
    };
    let mut model = LogRegModel::zeros(d, weights, hyper);
    let point: Vec<f64> = (0..=d).map(|_| rng.symmetric(1.5)).collect();
    model.set_params(&point);
    let (_, grad) = logreg::loss_and_grad(&model, &x, &y).unwrap();
    let numeric = numeric_gradient(&point, h, |p| {
        let mut m = model.clone();
        m.set_params(p);
        logreg::loss_and_grad(&m, &x, &y).unwrap().0
    });
    relative_error(&grad, &numeric)
}
