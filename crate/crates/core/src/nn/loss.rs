use crate::error::NnError;

/// Mean squared error and its gradient with respect to `predictions`.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(NnError::LossShape {
            predictions: predictions.len(),
            targets: targets.len(),
        });
    }
    let n = predictions.len() as f64;
    let mut loss = 0.0;
    let grad = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let r = p - t;
            loss += r * r;
            2.0 * r / n
        })
        .collect();
    Ok((loss / n, grad))
}
