use serde::{Deserialize, Serialize};

use super::model::{Policy, Target};
use crate::error::{Error, Result};

/// Stochastic gradient descent with heavy-ball momentum and optional
/// global-norm clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: Option<f64>,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, clip_norm: Option<f64>, n: usize) -> Self {
        Self { lr, momentum, clip_norm, velocity: vec![0.0; n] }
    }

    /// Applies a descent step on `grad` (gradient of the loss). Entries where
    /// `frozen` is true are left untouched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], frozen: Option<&[bool]>) {
        let mut scale = 1.0;
        if let Some(c) = self.clip_norm {
            let n = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if n > c {
                scale = c / n;
            }
        }
        for i in 0..params.len() {
            if frozen.is_some_and(|f| f[i]) {
                continue;
            }
            self.velocity[i] = self.momentum * self.velocity[i] + scale * grad[i];
            params[i] -= self.lr * self.velocity[i];
        }
    }
}

/// Mean negative log-likelihood over a batch and its gradient. Samples are
/// reduced in the order given.
pub fn batch_nll<'a>(
    policy: &Policy,
    batch: impl ExactSizeIterator<Item = (&'a [f64], &'a Target)>,
) -> Result<(f64, Vec<f64>)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let scale = -1.0 / n as f64;
    let mut grad = vec![0.0; policy.num_params()];
    let mut loss = 0.0;
    for (feat, target) in batch {
        loss -= policy.log_prob_target(feat, target, Some((&mut grad, scale)))?;
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss {loss}")));
    }
    Ok((loss, grad))
}
