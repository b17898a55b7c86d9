//! Class-weighted binary logistic regression.
//!
//! Features are z-scored with training statistics stored in the model. The
//! objective is the class-weighted mean negative log-likelihood plus an
//! optional L2 penalty on the weights (not the bias), minimized by full-batch
//! gradient descent with a halving backtracking line search.

use serde::{Deserialize, Serialize};

use crate::class_weights::{label_counts, ClassWeights};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogRegHyper {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub l2_lambda: f64,
}

impl Default for LogRegHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_iters: 10_000,
            grad_tol: 1e-6,
            l2_lambda: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_means: Vec<f64>,
    pub feature_sds: Vec<f64>,
    pub class_weights: ClassWeights,
    pub hyper: LogRegHyper,
}

/// Outcome of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    /// Loss at the initial point followed by the loss after every accepted step.
    pub losses: Vec<f64>,
    pub converged: bool,
}

/// `w_c = N / (2 * n_c)`.
pub fn balanced_class_weights(labels: &[u8]) -> Result<ClassWeights> {
    let counts = label_counts(labels)?;
    let n = labels.len() as f64;
    ClassWeights::new(n / (2.0 * counts[0] as f64), n / (2.0 * counts[1] as f64))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn check_matrix(x: &[Vec<f64>], dim: usize) -> Result<()> {
    for (i, row) in x.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::Shape(format!("row {i} has {} features, expected {dim}", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite feature in row {i}")));
        }
    }
    Ok(())
}

impl LogRegModel {
    /// Model with zero weights and identity standardization.
    pub fn zeros(dim: usize, class_weights: ClassWeights, hyper: LogRegHyper) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
            feature_means: vec![0.0; dim],
            feature_sds: vec![1.0; dim],
            class_weights,
            hyper,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn standardize(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        check_matrix(x, self.dim())?;
        Ok(x.iter()
            .map(|row| {
                row.iter()
                    .zip(self.feature_means.iter().zip(&self.feature_sds))
                    .map(|(v, (m, s))| (v - m) / s)
                    .collect()
            })
            .collect())
    }

    fn logit(&self, row: &[f64]) -> f64 {
        self.weights.iter().zip(row).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    /// Parameters as `[weights..., bias]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.push(self.bias);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let d = self.dim();
        self.weights.copy_from_slice(&params[..d]);
        self.bias = params[d];
    }
}

/// Weighted mean negative log-likelihood and its gradient `[d/dw..., d/db]`
/// on already standardized features.
pub fn loss_and_grad(model: &LogRegModel, x: &[Vec<f64>], y: &[u8]) -> Result<(f64, Vec<f64>)> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Shape(format!("{} rows vs {} labels", x.len(), y.len())));
    }
    check_matrix(x, model.dim())?;
    if model.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("non-finite model parameter".into()));
    }
    let n = x.len() as f64;
    let d = model.dim();
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    for (row, &label) in x.iter().zip(y) {
        if label > 1 {
            return Err(Error::InvalidArgument(format!("label {label} is not 0 or 1")));
        }
        let w = model.class_weights.get(label);
        let z = model.logit(row);
        let target = label as f64;
        loss += w * (softplus(z) - target * z);
        let dz = w * (sigmoid(z) - target);
        for (g, v) in grad[..d].iter_mut().zip(row) {
            *g += dz * v;
        }
        grad[d] += dz;
    }
    loss /= n;
    for g in &mut grad {
        *g /= n;
    }
    let lambda = model.hyper.l2_lambda;
    if lambda != 0.0 {
        loss += lambda * model.weights.iter().map(|w| w * w).sum::<f64>();
        for (g, w) in grad[..d].iter_mut().zip(&model.weights) {
            *g += 2.0 * lambda * w;
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    Ok((loss, grad))
}

pub fn train(x: &[Vec<f64>], y: &[u8], class_weights: ClassWeights, hyper: LogRegHyper) -> Result<LogRegModel> {
    train_traced(x, y, class_weights, hyper).map(|(m, _)| m)
}

pub fn train_traced(
    x: &[Vec<f64>],
    y: &[u8],
    class_weights: ClassWeights,
    hyper: LogRegHyper,
) -> Result<(LogRegModel, FitTrace)> {
    if x.len() < 2 || x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "need at least two labeled samples, got {} rows / {} labels",
            x.len(),
            y.len()
        )));
    }
    label_counts(y)?;
    class_weights.validate()?;
    let dim = x[0].len();
    check_matrix(x, dim)?;

    let n = x.len() as f64;
    let means: Vec<f64> = (0..dim).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let sds: Vec<f64> = (0..dim)
        .map(|j| {
            let var = x.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        })
        .collect();

    let mut model = LogRegModel {
        weights: vec![0.0; dim],
        bias: 0.0,
        feature_means: means,
        feature_sds: sds,
        class_weights,
        hyper,
    };
    let xs = model.standardize(x)?;
    let (mut loss, mut grad) = loss_and_grad(&model, &xs, y)?;
    let mut losses = vec![loss];
    let mut converged = false;

    'outer: for _ in 0..hyper.max_iters {
        if grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) < hyper.grad_tol {
            converged = true;
            break;
        }
        let current = model.params();
        let mut step = hyper.learning_rate;
        loop {
            let candidate: Vec<f64> = current.iter().zip(&grad).map(|(p, g)| p - step * g).collect();
            model.set_params(&candidate);
            let (cand_loss, cand_grad) = loss_and_grad(&model, &xs, y)?;
            if cand_loss <= loss {
                loss = cand_loss;
                grad = cand_grad;
                losses.push(loss);
                break;
            }
            step *= 0.5;
            if step < 1e-16 {
                model.set_params(&current);
                break 'outer;
            }
        }
    }
    if !converged {
        converged = grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) < hyper.grad_tol;
    }
    Ok((model, FitTrace { losses, converged }))
}

/// `P(label = 1)` for raw (unstandardized) feature rows.
pub fn predict_proba(model: &LogRegModel, x: &[Vec<f64>]) -> Result<Vec<f64>> {
    let xs = model.standardize(x)?;
    Ok(xs.iter().map(|r| sigmoid(model.logit(r))).collect())
}

/// Hard labels at the 0.5 threshold.
pub fn predict(model: &LogRegModel, x: &[Vec<f64>]) -> Result<Vec<u8>> {
    Ok(predict_proba(model, x)?
        .into_iter()
        .map(|p| u8::from(p >= 0.5))
        .collect())
}
