//! A small transformer-encoder sequence classifier trained from scratch.
//!
//! Token and learned position embeddings feed a stack of post-norm encoder
//! layers (masked multi-head self-attention, residual, layer norm, GELU
//! feed-forward, residual, layer norm). The final hidden state at the `[CLS]`
//! position goes through a linear head producing two logits. Backpropagation
//! is written out by hand in [`model`]; [`train`] holds the optimizer loop.

pub mod checkpoint;
pub mod model;
pub mod tensor;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub use model::{attention_maps, forward, loss_and_grads, softmax, Prediction};
pub use tensor::Matrix;
pub use train::{lr_at, num_train_steps, predict, ratio_class_weights, train, LogEntry, TrainConfig, TrainLog};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub n_labels: usize,
    pub dropout_rate: f64,
}

impl TransformerConfig {
    /// Desk-scale defaults for a given vocabulary size.
    pub fn desk_scale(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            max_len: 64,
            d_model: 32,
            n_heads: 2,
            n_layers: 2,
            d_ff: 64,
            n_labels: 2,
            dropout_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidArgument(format!("transformer config: {m}")));
        if self.n_labels != 2 {
            return fail(format!("n_labels must be 2, got {}", self.n_labels));
        }
        if self.n_heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.vocab_size < 4 || self.max_len < 3 || self.d_ff == 0 {
            return fail("vocab_size >= 4, max_len >= 3 and d_ff >= 1 required".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Closed-form number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        let d = self.d_model;
        let per_layer = 4 * (d * d + d) + (d * self.d_ff + self.d_ff) + (self.d_ff * d + d) + 4 * d;
        self.vocab_size * d + self.max_len * d + self.n_layers * per_layer + d * self.n_labels + self.n_labels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Matrix,
    pub bq: Matrix,
    pub wk: Matrix,
    pub bk: Matrix,
    pub wv: Matrix,
    pub bv: Matrix,
    pub wo: Matrix,
    pub bo: Matrix,
    pub ln1_gain: Matrix,
    pub ln1_shift: Matrix,
    pub w_ff1: Matrix,
    pub b_ff1: Matrix,
    pub w_ff2: Matrix,
    pub b_ff2: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_shift: Matrix,
}

impl LayerParams {
    fn zeros(d: usize, d_ff: usize) -> Self {
        Self {
            wq: Matrix::zeros(d, d),
            bq: Matrix::zeros(1, d),
            wk: Matrix::zeros(d, d),
            bk: Matrix::zeros(1, d),
            wv: Matrix::zeros(d, d),
            bv: Matrix::zeros(1, d),
            wo: Matrix::zeros(d, d),
            bo: Matrix::zeros(1, d),
            ln1_gain: Matrix::zeros(1, d),
            ln1_shift: Matrix::zeros(1, d),
            w_ff1: Matrix::zeros(d, d_ff),
            b_ff1: Matrix::zeros(1, d_ff),
            w_ff2: Matrix::zeros(d_ff, d),
            b_ff2: Matrix::zeros(1, d),
            ln2_gain: Matrix::zeros(1, d),
            ln2_shift: Matrix::zeros(1, d),
        }
    }

    fn tensors(&self) -> [(&'static str, &Matrix); 16] {
        [
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_shift", &self.ln1_shift),
            ("w_ff1", &self.w_ff1),
            ("b_ff1", &self.b_ff1),
            ("w_ff2", &self.w_ff2),
            ("b_ff2", &self.b_ff2),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_shift", &self.ln2_shift),
        ]
    }

    fn tensors_mut(&mut self) -> [(&'static str, &mut Matrix); 16] {
        [
            ("wq", &mut self.wq),
            ("bq", &mut self.bq),
            ("wk", &mut self.wk),
            ("bk", &mut self.bk),
            ("wv", &mut self.wv),
            ("bv", &mut self.bv),
            ("wo", &mut self.wo),
            ("bo", &mut self.bo),
            ("ln1_gain", &mut self.ln1_gain),
            ("ln1_shift", &mut self.ln1_shift),
            ("w_ff1", &mut self.w_ff1),
            ("b_ff1", &mut self.b_ff1),
            ("w_ff2", &mut self.w_ff2),
            ("b_ff2", &mut self.b_ff2),
            ("ln2_gain", &mut self.ln2_gain),
            ("ln2_shift", &mut self.ln2_shift),
        ]
    }
}

/// All trainable tensors. Also used as the gradient and optimizer-moment container.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams {
    pub config: TransformerConfig,
    pub token_embedding: Matrix,
    pub position_embedding: Matrix,
    pub layers: Vec<LayerParams>,
    pub classifier_w: Matrix,
    pub classifier_b: Matrix,
}

impl TransformerParams {
    pub fn zeros(config: &TransformerConfig) -> Self {
        let d = config.d_model;
        Self {
            config: *config,
            token_embedding: Matrix::zeros(config.vocab_size, d),
            position_embedding: Matrix::zeros(config.max_len, d),
            layers: (0..config.n_layers).map(|_| LayerParams::zeros(d, config.d_ff)).collect(),
            classifier_w: Matrix::zeros(d, config.n_labels),
            classifier_b: Matrix::zeros(1, config.n_labels),
        }
    }

    /// Named tensors in a fixed order (also the checkpoint order).
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![
            ("token_embedding".to_string(), &self.token_embedding),
            ("position_embedding".to_string(), &self.position_embedding),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            out.extend(layer.tensors().into_iter().map(|(n, m)| (format!("layer{i}.{n}"), m)));
        }
        out.push(("classifier_w".to_string(), &self.classifier_w));
        out.push(("classifier_b".to_string(), &self.classifier_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = vec![
            ("token_embedding".to_string(), &mut self.token_embedding),
            ("position_embedding".to_string(), &mut self.position_embedding),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.extend(layer.tensors_mut().into_iter().map(|(n, m)| (format!("layer{i}.{n}"), m)));
        }
        out.push(("classifier_w".to_string(), &mut self.classifier_w));
        out.push(("classifier_b".to_string(), &mut self.classifier_b));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.all_finite())
    }
}

fn is_gain(name: &str) -> bool {
    name.ends_with("_gain")
}

fn is_bias(name: &str) -> bool {
    name.ends_with("_shift") || name.rsplit('.').next().is_some_and(|n| n.starts_with('b')) || name == "classifier_b"
}

/// Glorot-uniform weights (`±sqrt(6 / (fan_in + fan_out))`), unit layer-norm
/// gains, zero biases and shifts. Tensors are drawn in [`TransformerParams::tensors`]
/// order from one seeded stream.
pub fn init_params(config: &TransformerConfig, seed: u64) -> Result<TransformerParams> {
    config.validate()?;
    let mut params = TransformerParams::zeros(config);
    let mut rng = SplitMix64::new(seed);
    for (name, m) in params.tensors_mut() {
        if is_gain(&name) {
            m.fill(1.0);
        } else if is_bias(&name) {
            m.fill(0.0);
        } else {
            let limit = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
            m.data_mut().iter_mut().for_each(|v| *v = rng.symmetric(limit));
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_with_unit_gains() {
        let cfg = TransformerConfig::desk_scale(100);
        let a = init_params(&cfg, 7).unwrap();
        assert_eq!(a, init_params(&cfg, 7).unwrap());
        assert_ne!(a, init_params(&cfg, 8).unwrap());
        for layer in &a.layers {
            assert!(layer.ln1_gain.data().iter().chain(layer.ln2_gain.data()).all(|&g| g == 1.0));
            assert!(layer.ln1_shift.data().iter().all(|&s| s == 0.0));
            assert!(layer.bq.data().iter().chain(layer.b_ff1.data()).all(|&b| b == 0.0));
        }
        assert!(a.classifier_b.data().iter().all(|&b| b == 0.0));
        let limit = (6.0f64 / (32.0 + 64.0)).sqrt();
        assert!(a.layers[0].w_ff1.data().iter().all(|v| v.abs() <= limit));
        assert!(a.layers[0].w_ff1.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn parameter_count_matches_shapes() {
        // V=100, d=32, L=64, ff=64, 2 layers:
        // embeddings 3200 + 2048; per layer 4*(1024+32) + (2048+64) + (2048+32) + 128 = 8544;
        // head 64 + 2.
        let cfg = TransformerConfig::desk_scale(100);
        assert_eq!(cfg.parameter_count(), 3200 + 2048 + 2 * 8544 + 66);
        assert_eq!(init_params(&cfg, 1).unwrap().parameter_count(), cfg.parameter_count());
    }

    #[test]
    fn config_validation() {
        let mut cfg = TransformerConfig::desk_scale(50);
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        cfg.n_heads = 2;
        cfg.n_labels = 3;
        assert!(cfg.validate().is_err());
    }
}
