//! Test-split metrics on clamped estimates.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::ModelError;
use crate::model::{Architecture, OperatorModel, ParameterReport};
use crate::train::{predict, TrainingSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub architecture: Architecture,
    pub split: Split,
    pub samples: usize,
    pub rmse: f64,
    pub mae: f64,
    pub max_abs_error: f64,
    /// RMSE of always predicting the mean training target.
    pub constant_baseline_rmse: f64,
    pub parameter_count: ParameterReport,
}

impl Metrics {
    /// `constant_baseline_rmse / rmse`; larger is better.
    pub fn improvement_factor(&self) -> f64 {
        self.constant_baseline_rmse / self.rmse
    }
}

/// Error statistics of `(prediction, target)` pairs: RMSE, MAE, max.
pub fn error_stats(pairs: impl Iterator<Item = (f64, f64)>) -> (f64, f64, f64) {
    let (mut sq, mut abs, mut max, mut n) = (0.0, 0.0, 0.0f64, 0usize);
    for (p, t) in pairs {
        let e = (p - t).abs();
        sq += e * e;
        abs += e;
        max = max.max(e);
        n += 1;
    }
    let n = n.max(1) as f64;
    ((sq / n).sqrt(), abs / n, max)
}

/// Evaluates `model` on `split` of `dataset` with estimates clamped to `[0, 1]`.
pub fn evaluate(model: &OperatorModel, dataset: &Dataset, split: Split) -> Result<Metrics, ModelError> {
    let train = TrainingSet::from_dataset(model, dataset, Split::Train)?;
    let set = TrainingSet::from_dataset(model, dataset, split)?;
    if train.is_empty() || set.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mean = train.target_mean();
    let preds = predict(model, &set)?;
    let (rmse, mae, max_abs_error) = error_stats(
        preds
            .iter()
            .zip(&set.points)
            .map(|(p, q)| (p.clamp(0.0, 1.0), q.target)),
    );
    let (constant_baseline_rmse, _, _) = error_stats(set.points.iter().map(|q| (mean, q.target)));
    Ok(Metrics {
        architecture: model.config().architecture,
        split,
        samples: set.len(),
        rmse,
        mae,
        max_abs_error,
        constant_baseline_rmse,
        parameter_count: model.parameter_count(),
    })
}
