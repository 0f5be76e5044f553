//! Seeded training loop with early stopping and per-epoch history.

mod early_stop;
mod trainer;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetError;
use crate::model::{ModelError, Network};
use crate::optim::{OptimizerError, OptimizerKind};

pub use early_stop::{early_stop_check, StopCheck, StopDecision};
pub use trainer::{evaluate_loss_accuracy, mean_cross_entropy, predict_labels, train};

pub const DEFAULT_ADAM_LEARNING_RATE: f64 = 1e-4;
pub const DEFAULT_SGD_LEARNING_RATE: f64 = 1e-2;
pub const DEFAULT_SGD_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    ValLoss,
    ValAccuracy,
}

impl Monitor {
    pub fn value(self, record: &EpochRecord) -> f64 {
        match self {
            Monitor::ValLoss => record.val_loss,
            Monitor::ValAccuracy => record.val_accuracy,
        }
    }

    /// Whether `candidate` beats `reference` by more than `min_delta`.
    pub fn improves(self, candidate: f64, reference: f64, min_delta: f64) -> bool {
        match self {
            Monitor::ValLoss => candidate < reference - min_delta,
            Monitor::ValAccuracy => candidate > reference + min_delta,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopSpec {
    pub enabled: bool,
    pub monitor: Monitor,
    pub patience: usize,
    pub min_delta: f64,
    pub restore_best: bool,
}

impl Default for EarlyStopSpec {
    fn default() -> Self {
        Self { enabled: true, monitor: Monitor::ValLoss, patience: 10, min_delta: 0.0, restore_best: true }
    }
}

/// Which weight snapshots are written under `checkpoints/`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointPolicy {
    /// `epoch_<E>/` for every epoch plus `best/`.
    EveryEpoch,
    #[default]
    BestOnly,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub optimizer_kind: OptimizerKind,
    /// Defaults to 1e-4 for Adam and 1e-2 for SGD when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    /// SGD only.
    pub momentum: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub early_stopping: EarlyStopSpec,
    pub seed: u64,
    pub checkpoints: CheckpointPolicy,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            optimizer_kind: OptimizerKind::Adam,
            learning_rate: None,
            momentum: DEFAULT_SGD_MOMENTUM,
            max_epochs: 100,
            batch_size: 32,
            early_stopping: EarlyStopSpec::default(),
            seed: 0,
            checkpoints: CheckpointPolicy::default(),
        }
    }
}

impl TrainingConfig {
    pub fn effective_learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(match self.optimizer_kind {
            OptimizerKind::Adam => DEFAULT_ADAM_LEARNING_RATE,
            OptimizerKind::Sgd => DEFAULT_SGD_LEARNING_RATE,
        })
    }

    /// Every violated field, empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.max_epochs == 0 {
            out.push("training.max_epochs must be >= 1".to_string());
        }
        if self.batch_size == 0 {
            out.push("training.batch_size must be >= 1".to_string());
        }
        let lr = self.effective_learning_rate();
        if !(lr > 0.0 && lr.is_finite()) {
            out.push(format!("training.learning_rate must be positive, got {lr}"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            out.push(format!("training.momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.early_stopping.min_delta >= 0.0 && self.early_stopping.min_delta.is_finite()) {
            out.push(format!("training.early_stopping.min_delta must be >= 0, got {}", self.early_stopping.min_delta));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug)]
pub struct TrainedModel<T> {
    pub network: Network<T>,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// 1-based epoch of the best monitored value (earliest on ties).
    pub best_epoch: usize,
    pub config: TrainingConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training data error: {0}")]
    Data(String),
    #[error("invalid training config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("training diverged at epoch {epoch}: non-finite {what}")]
    Divergence { epoch: usize, what: &'static str },
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub const HISTORY_HEADER: [&str; 5] = ["epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy"];

/// CSV `epoch,train_loss,train_accuracy,val_loss,val_accuracy`; reals use
/// the shortest representation that round-trips.
pub fn write_history_csv(history: &[EpochRecord], path: &Path) -> Result<(), TrainError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(HISTORY_HEADER)?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.train_accuracy.to_string(),
            r.val_loss.to_string(),
            r.val_accuracy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history_csv(path: &Path) -> Result<Vec<EpochRecord>, TrainError> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().collect::<Vec<_>>() != HISTORY_HEADER {
        return Err(TrainError::Data(format!("{} is not a history file", path.display())));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64, TrainError> {
            row[i].parse().map_err(|_| TrainError::Data(format!("bad number `{}`", &row[i])))
        };
        out.push(EpochRecord {
            epoch: row[0].parse().map_err(|_| TrainError::Data(format!("bad epoch `{}`", &row[0])))?,
            train_loss: num(1)?,
            train_accuracy: num(2)?,
            val_loss: num(3)?,
            val_accuracy: num(4)?,
        });
    }
    Ok(out)
}
