//! SGD with momentum and the cosine learning-rate schedule.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// One SGD-with-momentum update:
///
/// ```text
/// velocity' = momentum · velocity + grads
/// params'   = params − lr · velocity'
/// ```
///
/// With `momentum = 0` this is plain gradient descent.
pub fn sgd_momentum_step(
    params: &[f64],
    grads: &[f64],
    velocity: &[f64],
    lr: f64,
    momentum: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Config(format!(
            "sgd_momentum_step: shape mismatch (params {}, grads {}, velocity {})",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    if lr <= 0.0 {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::Config(format!(
            "momentum must be in [0, 1), got {momentum}"
        )));
    }
    let mut new_velocity = Vec::with_capacity(params.len());
    let mut new_params = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let v = momentum * velocity[i] + grads[i];
        new_velocity.push(v);
        new_params.push(params[i] - lr * v);
    }
    Ok((new_params, new_velocity))
}

/// Cosine-annealed learning rate for `epoch` of `total_epochs`:
/// `lr0 · (1 + cos(π · epoch / total_epochs)) / 2`, decaying to 0.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64) -> Result<f64> {
    if lr0 <= 0.0 {
        return Err(Error::Config(format!("lr0 must be positive, got {lr0}")));
    }
    if epoch >= total_epochs {
        return Err(Error::Range(format!(
            "cosine_lr: epoch {epoch} not below total_epochs {total_epochs}"
        )));
    }
    Ok(lr0 * (1.0 + (PI * epoch as f64 / total_epochs as f64).cos()) / 2.0)
}
