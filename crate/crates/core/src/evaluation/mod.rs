//! Confusion-matrix metrics, k-fold cross-validation and comparison reports.
//!
//! Melanoma is the positive class: sensitivity is the true-positive rate on
//! melanoma, specificity the true-negative rate on benign lesions.

mod kfold;
mod report;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetError, Label};
use crate::model::ModelError;
use crate::training::TrainError;

pub use kfold::{cross_validate, kfold_cross_validate, FailedFold, FoldJob, FoldResult, KFoldSettings, KFoldSummary};
pub use report::{
    aggregate_reports, ComparisonRow, ComparisonTable, EvaluationReport, ReportSettings, METRIC_DEFINITIONS,
    REPORT_SCHEMA_VERSION,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("{metric} is undefined: no {missing} samples were evaluated")]
    UndefinedMetric { metric: &'static str, missing: &'static str },
    #[error("report schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl MetricSet {
    pub const NAMES: [&'static str; 3] = ["accuracy", "sensitivity", "specificity"];

    pub fn values(&self) -> [f64; 3] {
        [self.accuracy, self.sensitivity, self.specificity]
    }

    pub fn from_values([accuracy, sensitivity, specificity]: [f64; 3]) -> Self {
        Self { accuracy, sensitivity, specificity }
    }
}

/// Counts `(label, prediction)` pairs with melanoma as the positive class.
pub fn confusion_from_predictions(labels: &[Label], predicted: &[Label]) -> Result<ConfusionMatrix, EvalError> {
    if labels.len() != predicted.len() {
        return Err(EvalError::Shape(format!("{} labels but {} predictions", labels.len(), predicted.len())));
    }
    if labels.is_empty() {
        return Err(EvalError::Shape("no predictions to evaluate".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (label, pred) in labels.iter().zip(predicted) {
        match (label.is_positive(), pred.is_positive()) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fp += 1,
        }
    }
    Ok(cm)
}

fn ratio_to_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Accuracy, sensitivity and specificity, computed as exact ratios and then
/// rendered as reals. Both classes must be present.
pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Result<MetricSet, EvalError> {
    if cm.positives() == 0 {
        return Err(EvalError::UndefinedMetric { metric: "sensitivity", missing: "melanoma" });
    }
    if cm.negatives() == 0 {
        return Err(EvalError::UndefinedMetric { metric: "specificity", missing: "benign" });
    }
    Ok(MetricSet {
        accuracy: ratio_to_f64(Ratio::new(cm.tp + cm.tn, cm.total())),
        sensitivity: ratio_to_f64(Ratio::new(cm.tp, cm.positives())),
        specificity: ratio_to_f64(Ratio::new(cm.tn, cm.negatives())),
    })
}

/// Mean and population standard deviation of each metric.
///
/// The mean is taken as `x0 + mean(x - x0)`, so identical inputs give exactly
/// that value back and a standard deviation of exactly zero.
pub fn mean_and_std(sets: &[MetricSet]) -> Option<(MetricSet, MetricSet)> {
    let first = sets.first()?.values();
    let n = sets.len() as f64;
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for m in 0..3 {
        let shift: f64 = sets.iter().map(|s| s.values()[m] - first[m]).sum::<f64>() / n;
        mean[m] = first[m] + shift;
        let var: f64 = sets.iter().map(|s| (s.values()[m] - mean[m]).powi(2)).sum::<f64>() / n;
        std[m] = var.sqrt();
    }
    Some((MetricSet::from_values(mean), MetricSet::from_values(std)))
}
