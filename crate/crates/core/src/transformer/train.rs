//! Training loop: Adam with linearly decaying learning rate, class-weighted
//! cross-entropy, seeded per-epoch shuffles and a dropped final partial batch.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{forward, loss_and_grads_with, Prediction};
use super::{init_params, TransformerConfig, TransformerParams};
use crate::class_weights::{label_counts, ClassWeights};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};
use crate::wordpiece::Encoding;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub num_epochs: usize,
    pub lr_init: f64,
    pub lr_end: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            num_epochs: 3,
            lr_init: 5e-5,
            lr_end: 0.0,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.num_epochs == 0 || !(self.lr_init > self.lr_end && self.lr_end >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid train config {self:?}")));
        }
        Ok(())
    }
}

/// `(n_train / batch_size) * num_epochs` with integer division.
pub fn num_train_steps(n_train: usize, batch_size: usize, num_epochs: usize) -> usize {
    (n_train / batch_size.max(1)) * num_epochs
}

/// Linear (power-1 polynomial) decay from `lr_init` to `lr_end` over `num_steps`,
/// constant at `lr_end` afterwards.
pub fn lr_at(step: usize, cfg: &TrainConfig, num_steps: usize) -> Result<f64> {
    if num_steps == 0 {
        return Err(Error::InvalidArgument("number of training steps is zero".into()));
    }
    let progress = step.min(num_steps) as f64 / num_steps as f64;
    Ok(cfg.lr_end + (cfg.lr_init - cfg.lr_end) * (1.0 - progress))
}

/// `{0: n_polite / n_impolite, 1: 1.0}`.
pub fn ratio_class_weights(labels: &[u8]) -> Result<ClassWeights> {
    let counts = label_counts(labels)?;
    ClassWeights::new(counts[1] as f64 / counts[0] as f64, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,lr,loss\n");
        for e in &self.entries {
            out.push_str(&format!("{},{:e},{:.17e}\n", e.step, e.lr, e.loss));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn mean_loss(entries: &[LogEntry]) -> f64 {
        entries.iter().map(|e| e.loss).sum::<f64>() / entries.len().max(1) as f64
    }
}

struct Adam {
    m: TransformerParams,
    v: TransformerParams,
    t: i32,
}

impl Adam {
    fn new(config: &TransformerConfig) -> Self {
        Self {
            m: TransformerParams::zeros(config),
            v: TransformerParams::zeros(config),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut TransformerParams, grads: &TransformerParams, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()));
        for (((_, p), (_, g)), ((_, m), (_, v))) in tensors {
            for (((p, g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Trains from a seeded initialization. Deterministic in `train_cfg.seed`.
pub fn train(
    encodings: &[Encoding],
    labels: &[u8],
    config: &TransformerConfig,
    train_cfg: &TrainConfig,
    class_weights: &ClassWeights,
) -> Result<(TransformerParams, TrainLog)> {
    let params = init_params(config, train_cfg.seed)?;
    train_from(params, encodings, labels, train_cfg, class_weights)
}

/// Continues training from given parameters.
pub fn train_from(
    mut params: TransformerParams,
    encodings: &[Encoding],
    labels: &[u8],
    train_cfg: &TrainConfig,
    class_weights: &ClassWeights,
) -> Result<(TransformerParams, TrainLog)> {
    train_cfg.validate()?;
    class_weights.validate()?;
    if encodings.len() != labels.len() {
        return Err(Error::Shape(format!("{} encodings vs {} labels", encodings.len(), labels.len())));
    }
    label_counts(labels)?;
    let steps_per_epoch = encodings.len() / train_cfg.batch_size;
    let total_steps = num_train_steps(encodings.len(), train_cfg.batch_size, train_cfg.num_epochs);
    if total_steps == 0 {
        return Err(Error::InvalidArgument(format!(
            "{} samples cannot fill a batch of {}",
            encodings.len(),
            train_cfg.batch_size
        )));
    }
    let mut dropout_rng = SplitMix64::new(derive_seed(train_cfg.seed, u64::MAX));
    let use_dropout = params.config.dropout_rate > 0.0;
    let mut adam = Adam::new(&params.config);
    let mut log = TrainLog::default();
    let mut step = 0;
    let mut batch = Vec::with_capacity(train_cfg.batch_size);
    let mut batch_labels = Vec::with_capacity(train_cfg.batch_size);
    for epoch in 0..train_cfg.num_epochs {
        let mut order: Vec<usize> = (0..encodings.len()).collect();
        SplitMix64::new(derive_seed(train_cfg.seed, epoch as u64 + 1)).shuffle(&mut order);
        for chunk in order.chunks_exact(train_cfg.batch_size).take(steps_per_epoch) {
            batch.clear();
            batch_labels.clear();
            for &i in chunk {
                batch.push(encodings[i].clone());
                batch_labels.push(labels[i]);
            }
            let rng = if use_dropout { Some(&mut dropout_rng) } else { None };
            let (loss, grads) = loss_and_grads_with(&params, &batch, &batch_labels, class_weights, rng)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss diverged at step {step}")));
            }
            let lr = lr_at(step, train_cfg, total_steps)?;
            adam.step(&mut params, &grads, lr);
            log.entries.push(LogEntry { step, lr, loss });
            step += 1;
        }
    }
    Ok((params, log))
}

/// Softmax probabilities and argmax labels (ties to label 0).
pub fn predict(params: &TransformerParams, encodings: &[Encoding]) -> Result<Vec<Prediction>> {
    Ok(forward(params, encodings)?
        .into_iter()
        .map(Prediction::from_logits)
        .collect())
}
