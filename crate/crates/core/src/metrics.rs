//! Error metrics against ground truth.

use crate::{Error, Result};

/// `(1/M)·Σ (estimateᵢ − truthᵢ)²`.
pub fn compute_mse(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::LengthMismatch { expected: truth.len(), got: estimate.len() });
    }
    if truth.is_empty() {
        return Err(Error::InvalidInput("mse of empty vectors".into()));
    }
    let sum: f64 = estimate.iter().zip(truth).map(|(e, t)| (e - t) * (e - t)).sum();
    Ok(sum / truth.len() as f64)
}
