use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConfusionMatrix, EvalError, KFoldSummary, MetricSet};
use crate::model::ModelSpec;
use crate::training::TrainingConfig;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const METRIC_DEFINITIONS: &str = "positive class = melanoma; accuracy = (tp+tn)/(tp+fp+tn+fn); \
sensitivity = tp/(tp+fn); specificity = tn/(tn+fp); prediction = argmax of softmax, ties to benign; \
k-fold std = population standard deviation over successful folds";

/// Everything that shaped a run, recorded alongside its results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSettings {
    pub model: ModelSpec,
    pub training: TrainingConfig,
    pub effective_learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub test_fraction: f64,
    pub validation_fraction: f64,
    pub stratified: bool,
    pub balancing_ratio: f64,
    pub train_size: usize,
    pub validation_size: usize,
    pub test_size: usize,
}

/// Results of one trained configuration. Contains no wall-clock data, so a
/// rerun with the same config and seed serialises identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    /// Row name in comparison tables.
    pub label: String,
    pub architecture: String,
    pub config_digest: String,
    pub metric_definitions: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained_digest: Option<String>,
    /// Training-set accuracy of the epoch whose weights were kept.
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
    pub validation_loss: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub test_metrics: MetricSet,
    pub test_confusion: ConfusionMatrix,
    pub kfold: Option<KFoldSummary>,
    pub history_ref: String,
    pub settings: ReportSettings,
    pub warnings: Vec<String>,
}

impl EvaluationReport {
    pub fn to_json_string(&self) -> Result<String, EvalError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self, EvalError> {
        let value: serde_json::Value = serde_json::from_slice(&std::fs::read(path)?)?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(REPORT_SCHEMA_VERSION) => Ok(serde_json::from_value(value)?),
            other => Err(EvalError::Schema(format!(
                "{} has schema version {other:?}, expected {REPORT_SCHEMA_VERSION}",
                path.display()
            ))),
        }
    }
}

/// One comparison-table row; reals are fractions in [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
    pub test_accuracy: f64,
    pub kfold_accuracy: Option<f64>,
    pub test_sensitivity: f64,
    pub test_specificity: f64,
}

impl ComparisonRow {
    fn cells(&self) -> [Option<f64>; 6] {
        [
            Some(self.train_accuracy),
            Some(self.validation_accuracy),
            Some(self.test_accuracy),
            self.kfold_accuracy,
            Some(self.test_sensitivity),
            Some(self.test_specificity),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

const CSV_HEADER: [&str; 7] = [
    "model",
    "train_accuracy",
    "validation_accuracy",
    "test_accuracy",
    "kfold_accuracy",
    "test_sensitivity",
    "test_specificity",
];

const TEXT_HEADER: [&str; 7] = [
    "Model",
    "Train Accuracy",
    "Validation Accuracy",
    "Test Accuracy",
    "k-fold Accuracy",
    "Test Sensitivity",
    "Test Specificity",
];

fn percent(value: f64) -> String {
    format!("{:.2}", value * 100.0)
}

impl ComparisonTable {
    /// CSV with metrics as percentages to two decimals; an empty cell marks
    /// a metric that was not computed.
    pub fn to_csv_string(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for row in &self.rows {
            let mut record = vec![row.label.clone()];
            record.extend(row.cells().iter().map(|c| c.map(percent).unwrap_or_default()));
            w.write_record(&record).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    /// Column-aligned plain text (percentages, `-` for missing values).
    pub fn to_text(&self) -> String {
        let mut grid: Vec<Vec<String>> = vec![TEXT_HEADER.iter().map(|s| s.to_string()).collect()];
        for row in &self.rows {
            let mut line = vec![row.label.clone()];
            line.extend(row.cells().iter().map(|c| c.map(percent).unwrap_or_else(|| "-".into())));
            grid.push(line);
        }
        let widths: Vec<usize> =
            (0..TEXT_HEADER.len()).map(|c| grid.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (i, line) in grid.iter().enumerate() {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, &w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                out.push('\n');
            }
        }
        out
    }

    pub fn write(&self, csv_path: &Path, text_path: &Path) -> Result<(), EvalError> {
        std::fs::write(csv_path, self.to_csv_string())?;
        std::fs::write(text_path, self.to_text())?;
        Ok(())
    }
}

/// One row per report, in input order. All reports must share the schema
/// version and either all or none must carry k-fold results.
pub fn aggregate_reports(reports: &[EvaluationReport]) -> Result<ComparisonTable, EvalError> {
    let first = reports.first().ok_or_else(|| EvalError::Schema("no reports to aggregate".into()))?;
    for r in reports {
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(EvalError::Schema(format!(
                "report `{}` has schema version {}, expected {REPORT_SCHEMA_VERSION}",
                r.label, r.schema_version
            )));
        }
        if r.kfold.is_some() != first.kfold.is_some() {
            return Err(EvalError::Schema(format!(
                "report `{}` {} k-fold results but `{}` {}",
                r.label,
                if r.kfold.is_some() { "has" } else { "lacks" },
                first.label,
                if first.kfold.is_some() { "has" } else { "lacks" },
            )));
        }
    }
    let rows = reports
        .iter()
        .map(|r| ComparisonRow {
            label: r.label.clone(),
            train_accuracy: r.train_accuracy,
            validation_accuracy: r.validation_accuracy,
            test_accuracy: r.test_metrics.accuracy,
            kfold_accuracy: r.kfold.as_ref().and_then(|k| k.mean_metrics).map(|m| m.accuracy),
            test_sensitivity: r.test_metrics.sensitivity,
            test_specificity: r.test_metrics.specificity,
        })
        .collect();
    Ok(ComparisonTable { rows })
}
