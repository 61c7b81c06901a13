//! Per-prediction losses, differentiated with respect to the decoder logits.

use super::layer::softmax;
use crate::error::{Error, Result};

/// Binary cross-entropy from a logit: `max(z,0) − z·y + ln(1 + e^{−|z|})`.
pub fn bce_with_logits(logit: f64, target: f64) -> (f64, f64) {
    let loss = logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p();
    (loss, super::layer::sigmoid(logit) - target)
}

/// Categorical cross-entropy via log-sum-exp.
pub fn softmax_cross_entropy(logits: &[f64], class: usize) -> Result<(f64, Vec<f64>)> {
    if class >= logits.len() {
        return Err(Error::contract(format!(
            "class index {class} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    let mut grad = softmax(logits)?;
    grad[class] -= 1.0;
    Ok((lse - logits[class], grad))
}

pub fn squared_error(prediction: f64, target: f64) -> (f64, f64) {
    let diff = prediction - target;
    (diff * diff, 2.0 * diff)
}
