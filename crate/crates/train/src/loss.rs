use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {predictions} predictions, {targets} targets, {weights} weights")]
    ShapeMismatch {
        predictions: usize,
        targets: usize,
        weights: usize,
    },
    #[error("empty batch")]
    Empty,
    #[error("non-finite value at sample {0}")]
    NonFinite(usize),
    #[error("negative weight at sample {0}")]
    NegativeWeight(usize),
}

/// `(1/n) sum_i [w_sbp,i (s_hat - s)^2 + w_dbp,i (d_hat - d)^2]`.
///
/// Samples are accumulated in index order with the SBP term first, the same
/// order [`unweighted_mse_sum`] uses, so unit weights reproduce it exactly.
pub fn weighted_loss(
    predictions: &[(f64, f64)],
    targets: &[(f64, f64)],
    weights: &[(f64, f64)],
) -> Result<f64, LossError> {
    let n = predictions.len();
    if targets.len() != n || weights.len() != n {
        return Err(LossError::ShapeMismatch {
            predictions: n,
            targets: targets.len(),
            weights: weights.len(),
        });
    }
    if n == 0 {
        return Err(LossError::Empty);
    }
    let mut total = 0.0;
    for i in 0..n {
        let (p, t, w) = (predictions[i], targets[i], weights[i]);
        if ![p.0, p.1, t.0, t.1, w.0, w.1].iter().all(|v| v.is_finite()) {
            return Err(LossError::NonFinite(i));
        }
        if w.0 < 0.0 || w.1 < 0.0 {
            return Err(LossError::NegativeWeight(i));
        }
        let (es, ed) = (p.0 - t.0, p.1 - t.1);
        total += w.0 * es * es + w.1 * ed * ed;
    }
    Ok(total / n as f64)
}

/// Per-output-summed MSE, `(1/n) sum_i [(s_hat - s)^2 + (d_hat - d)^2]`.
pub fn unweighted_mse_sum(predictions: &[(f64, f64)], targets: &[(f64, f64)]) -> Result<f64, LossError> {
    let n = predictions.len();
    if targets.len() != n {
        return Err(LossError::ShapeMismatch {
            predictions: n,
            targets: targets.len(),
            weights: n,
        });
    }
    if n == 0 {
        return Err(LossError::Empty);
    }
    let mut total = 0.0;
    for i in 0..n {
        let (p, t) = (predictions[i], targets[i]);
        if ![p.0, p.1, t.0, t.1].iter().all(|v| v.is_finite()) {
            return Err(LossError::NonFinite(i));
        }
        let (es, ed) = (p.0 - t.0, p.1 - t.1);
        total += es * es + ed * ed;
    }
    Ok(total / n as f64)
}
