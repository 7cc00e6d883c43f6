//! Alignment losses over per-class similarity scores.

use crate::error::{Error, Result};
use crate::numerics::graph::{sigmoid, softplus};

/// Pairwise sigmoid loss for one sample: sum over classes of
/// `log(1 + exp(-s_i * y_i))` with `y_i = +1` for the true class and `-1`
/// otherwise. Each class contributes an independent binary term, which is
/// what lets expert updates split into batches.
pub fn sigmoid_loss(sims: &[f64], true_index: usize) -> Result<f64> {
    if true_index >= sims.len() {
        return Err(Error::contract(format!(
            "true class index {true_index} out of range ({} classes)",
            sims.len()
        )));
    }
    Ok(sims
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let y = if i == true_index { 1.0 } else { -1.0 };
            softplus(-s * y)
        })
        .sum())
}

/// Analytic gradient of [`sigmoid_loss`] with respect to each score:
/// `d/ds_i = -y_i * sigma(-s_i * y_i)`.
pub fn sigmoid_loss_grad(sims: &[f64], true_index: usize) -> Result<Vec<f64>> {
    if true_index >= sims.len() {
        return Err(Error::contract(format!(
            "true class index {true_index} out of range ({} classes)",
            sims.len()
        )));
    }
    Ok(sims
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let y = if i == true_index { 1.0 } else { -1.0 };
            -y * sigmoid(-s * y)
        })
        .collect())
}

/// Multi-class cross-entropy over temperature-scaled scores:
/// `-log softmax(sims / temperature)[true_index]`.
pub fn cross_entropy_loss(sims: &[f64], true_index: usize, temperature: f64) -> Result<f64> {
    if true_index >= sims.len() {
        return Err(Error::contract(format!(
            "true class index {true_index} out of range ({} classes)",
            sims.len()
        )));
    }
    if temperature <= 0.0 {
        return Err(Error::Domain("temperature must be positive".into()));
    }
    let logits: Vec<f64> = sims.iter().map(|s| s / temperature).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    Ok(lse - logits[true_index])
}
