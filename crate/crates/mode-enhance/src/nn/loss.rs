//! Batch losses: half squared error and cross-entropy, both mean-reduced
//! over the batch.

use ndarray::Array2;

use crate::error::{Error, Result};

use super::Scalar;

/// Mean over the batch of `0.5 * ||pred - target||^2`.
pub fn mse<F: Scalar>(pred: &Array2<F>, target: &Array2<F>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::Dimension(format!(
            "prediction is {:?} but target is {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let half = F::of_f64(0.5);
    let total: F = pred
        .iter()
        .zip(target.iter())
        .map(|(p, t)| {
            let d = *p - *t;
            half * d * d
        })
        .sum();
    Ok(total.as_f64() / pred.nrows() as f64)
}

/// Gradient of [`mse`] with respect to the predictions.
pub fn mse_grad<F: Scalar>(pred: &Array2<F>, target: &Array2<F>) -> Result<Array2<F>> {
    if pred.dim() != target.dim() {
        return Err(Error::Dimension(format!(
            "prediction is {:?} but target is {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let scale = F::of_f64(1.0 / pred.nrows() as f64);
    Ok((pred - target) * scale)
}

/// Mean over the batch of `-ln p[label]` for probability rows.
pub fn cross_entropy<F: Scalar>(probs: &Array2<F>, labels: &[usize]) -> Result<f64> {
    if probs.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} probability rows but {} labels",
            probs.nrows(),
            labels.len()
        )));
    }
    let tol = F::of_f64(1e-6);
    let mut total = 0.0;
    for (row, &label) in probs.rows().into_iter().zip(labels) {
        if label >= row.len() {
            return Err(Error::Data(format!(
                "label {label} out of range for {} classes",
                row.len()
            )));
        }
        let sum: F = row.iter().copied().sum();
        if (sum - F::one()).abs() > tol {
            return Err(Error::Data(format!(
                "probability row sums to {sum}, expected 1"
            )));
        }
        total -= row[label].max(F::of_f64(1e-300)).as_f64().ln();
    }
    Ok(total / labels.len() as f64)
}
