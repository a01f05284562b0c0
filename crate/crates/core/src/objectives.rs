//! Segmentation loss and the sparsity penalty on fine-tuned blocks.
//!
//! `total = bce + lambda * mean_over_batch( sum_l (1 - I_l(x)) )`

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::routing::{sigmoid, IndicatorVector};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub eps: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            lambda: 0.0,
            eps: DEFAULT_EPS,
        }
    }
}

impl ObjectiveConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(ObjectiveConfig {
            lambda,
            eps: DEFAULT_EPS,
        })
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be a finite non-negative number, got {lambda}")));
    }
    Ok(())
}

/// `ln sigmoid(z)` without overflow.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}


/// Mean binary cross-entropy over all pixels, with log-probabilities floored
/// at `ln(eps)`. Returns the loss and its gradient with respect to the logits.
pub fn bce_loss_and_grad<S: Scalar>(logits: &Tensor<S>, target: &Tensor<S>, eps: f64) -> Result<(f64, Tensor<S>)> {
    if logits.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "logits {:?} and target {:?} differ in shape",
            logits.shape(),
            target.shape()
        )));
    }
    let floor = eps.ln();
    let count = logits.data().len().max(1) as f64;
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for ((g, &z), &t) in grad.data_mut().iter_mut().zip(logits.data()).zip(target.data()) {
        let z = z.to_f64_lossy();
        let t = t.to_f64_lossy();
        let p = sigmoid(z);
        let lp = log_sigmoid(z);
        let lq = log_sigmoid(-z);
        let mut d = 0.0;
        if t > 0.0 {
            total -= t * lp.max(floor);
            if lp > floor {
                d -= t * (1.0 - p);
            }
        }
        if t < 1.0 {
            total -= (1.0 - t) * lq.max(floor);
            if lq > floor {
                d += (1.0 - t) * p;
            }
        }
        *g = S::from_f64_lossy(d / count);
    }
    Ok((total / count, grad))
}

pub fn bce_loss<S: Scalar>(logits: &Tensor<S>, target: &Tensor<S>, eps: f64) -> Result<f64> {
    Ok(bce_loss_and_grad(logits, target, eps)?.0)
}

/// `lambda * sum_l (1 - I_l)` for a single input, using the hard decisions.
pub fn policy_regularizer(indicators: &IndicatorVector, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(lambda * indicators.num_tuned() as f64)
}

/// Batch mean of [`policy_regularizer`].
pub fn policy_regularizer_batch(indicators: &[IndicatorVector], lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if indicators.is_empty() {
        return Ok(0.0);
    }
    let sum: usize = indicators.iter().map(IndicatorVector::num_tuned).sum();
    Ok(lambda * sum as f64 / indicators.len() as f64)
}

/// Gradient of [`policy_regularizer_batch`] with respect to each soft
/// indicator (straight-through: the hard value is replaced by the soft one).
pub fn policy_regularizer_soft_grad(indicators: &[IndicatorVector], lambda: f64) -> Result<Vec<Vec<f64>>> {
    check_lambda(lambda)?;
    let b = indicators.len().max(1) as f64;
    Ok(indicators.iter().map(|v| vec![-lambda / b; v.len()]).collect())
}

pub fn total_loss(segm: f64, reg: f64) -> f64 {
    segm + reg
}
