//! Experiment configuration and the suites built on top of the pipeline:
//! single runs, architecture and optimizer comparisons, and head-layer
//! ablations.

mod plot;
mod runner;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{BalancingRatio, DatasetError, TARGET_SIDE};
use crate::evaluation::EvalError;
use crate::model::{BackboneId, ModelError, ModelSpec};
use crate::training::{TrainError, TrainingConfig};

pub use plot::{plot_learning_curves, PlotArtifacts, PLOT_DATA_HEADER};
pub use runner::{
    plan_experiment, run_ablation, run_experiment, run_optimizer_comparison, ExperimentOutcome, ExperimentPlan,
    MemberFailure, MemberPlan, RunArtifacts, ABLATION_HEADER,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    #[default]
    Single,
    CompareArchitectures,
    CompareOptimizers,
    Ablation,
}

impl Suite {
    pub fn label(self) -> &'static str {
        match self {
            Suite::Single => "single",
            Suite::CompareArchitectures => "compare_architectures",
            Suite::CompareOptimizers => "compare_optimizers",
            Suite::Ablation => "ablation",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub test_fraction: f64,
    pub stratified: bool,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self { test_fraction: 0.3, stratified: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KFoldConfig {
    pub enabled: bool,
    pub k: usize,
    /// Fold over the training split only (the test split stays untouched);
    /// otherwise fold over the whole manifest.
    pub train_only: bool,
}

impl Default for KFoldConfig {
    fn default() -> Self {
        Self { enabled: false, k: 10, train_only: true }
    }
}

fn default_architectures() -> Vec<BackboneId> {
    vec![BackboneId::AlexnetModified, BackboneId::Vgg16, BackboneId::Vgg19]
}

/// One reproducible experiment. Every random choice derives from `seed`,
/// which also overrides `training.seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset_root: PathBuf,
    pub output_dir: PathBuf,
    pub suite: Suite,
    pub seed: u64,
    pub model: ModelSpec,
    pub training: TrainingConfig,
    pub split: SplitSettings,
    /// Share of the training split held out for early stopping.
    pub validation_fraction: f64,
    pub balancing_ratio: BalancingRatio,
    pub kfold: KFoldConfig,
    /// Backbones compared by the `compare_architectures` suite.
    pub architectures: Vec<BackboneId>,
    /// Single suite only: also train the whole-backbone-frozen baseline and
    /// plot it against the configured model.
    pub transfer_baseline: bool,
    /// Decode and preprocess every image once up front.
    pub preload: bool,
    /// Pretrained weight directory; falls back to `LESIONTL_CACHE`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_cache: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset_root: PathBuf::new(),
            output_dir: PathBuf::new(),
            suite: Suite::default(),
            seed: 0,
            model: ModelSpec::default(),
            training: TrainingConfig::default(),
            split: SplitSettings::default(),
            validation_fraction: 0.15,
            balancing_ratio: BalancingRatio::default(),
            kfold: KFoldConfig::default(),
            architectures: default_architectures(),
            transfer_baseline: false,
            preload: true,
            weight_cache: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment config:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),
    #[error("ablation impossible: {0}")]
    AblationImpossible(String),
    #[error("plot error: {0}")]
    Plot(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATASET: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_PARTIAL: i32 = 5;

fn train_exit_code(err: &TrainError) -> i32 {
    match err {
        TrainError::Divergence { .. } => EXIT_DIVERGENCE,
        TrainError::Config(_) => EXIT_CONFIG,
        TrainError::Data(_) | TrainError::Dataset(_) => EXIT_DATASET,
        TrainError::Model(e) => model_exit_code(e),
        _ => 1,
    }
}

fn model_exit_code(err: &ModelError) -> i32 {
    match err {
        ModelError::Spec(_) | ModelError::Policy { .. } | ModelError::WeightLoad { .. } => EXIT_CONFIG,
        _ => 1,
    }
}

impl ExperimentError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::AblationImpossible(_) => EXIT_CONFIG,
            ExperimentError::Dataset(_) => EXIT_DATASET,
            ExperimentError::Model(e) => model_exit_code(e),
            ExperimentError::Train(e) => train_exit_code(e),
            ExperimentError::Eval(e) => match e {
                EvalError::Train(t) => train_exit_code(t),
                EvalError::Dataset(_) => EXIT_DATASET,
                EvalError::Model(m) => model_exit_code(m),
                _ => 1,
            },
            _ => 1,
        }
    }

    pub fn is_divergence(&self) -> bool {
        self.exit_code() == EXIT_DIVERGENCE
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Config(vec![format!("config: {e}")]))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        Self::from_json_str(&text)
    }

    /// The config actually run: `training.seed` follows `seed`.
    pub fn normalized(&self) -> Self {
        let mut c = self.clone();
        c.training.seed = c.seed;
        c
    }

    /// Every violated field; empty when the config is runnable.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.dataset_root.as_os_str().is_empty() {
            out.push("dataset_root is required".into());
        } else if !self.dataset_root.is_dir() {
            out.push(format!("dataset_root {} is not a directory", self.dataset_root.display()));
        }
        if self.output_dir.as_os_str().is_empty() {
            out.push("output_dir is required".into());
        } else if let Some(problem) = unwritable(&self.output_dir) {
            out.push(problem);
        }
        let models: Vec<ModelSpec> = match self.suite {
            Suite::CompareArchitectures => {
                if self.architectures.is_empty() {
                    out.push("architectures must list at least one backbone".into());
                }
                for (i, b) in self.architectures.iter().enumerate() {
                    if self.architectures[..i].iter().any(|a| a.label() == b.label()) {
                        out.push(format!("architectures lists `{}` twice", b.label()));
                    }
                }
                self.architectures.iter().map(|b| ModelSpec { backbone_id: b.clone(), ..self.model.clone() }).collect()
            }
            _ => vec![self.model.clone()],
        };
        for spec in &models {
            if let Err(e) = spec.validate() {
                out.push(format!("model ({}): {e}", spec.backbone_id));
            }
        }
        if self.model.input_size != TARGET_SIDE as usize {
            out.push(format!("model.input_size must be {TARGET_SIDE}, got {}", self.model.input_size));
        }
        out.extend(self.training.violations());
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            out.push(format!("split.test_fraction must be in (0, 1), got {}", self.split.test_fraction));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            out.push(format!("validation_fraction must be in (0, 1), got {}", self.validation_fraction));
        }
        if self.kfold.enabled && self.kfold.k < 2 {
            out.push(format!("kfold.k must be >= 2, got {}", self.kfold.k));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ExperimentError::Config(v))
        }
    }

    /// SHA-256 of the canonical JSON of the normalized config, leaving out
    /// `output_dir` so the same experiment hashes alike wherever it is written.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self.normalized()).expect("config serialises");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    /// `<suite>-<seed>-<first 8 digest digits>`.
    pub fn run_id(&self) -> String {
        format!("{}-{}-{}", self.suite.label(), self.seed, &self.digest()[..8])
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(self.run_id())
    }
}

/// Why `dir` (or the nearest existing ancestor) cannot take new files.
fn unwritable(dir: &Path) -> Option<String> {
    let mut probe = Some(dir);
    while let Some(p) = probe {
        if p.exists() {
            return match std::fs::metadata(p) {
                Ok(m) if !m.is_dir() => Some(format!("output_dir {} is not a directory", p.display())),
                Ok(m) if m.permissions().readonly() => Some(format!("output_dir {} is read-only", p.display())),
                Ok(_) => None,
                Err(e) => Some(format!("output_dir {}: {e}", p.display())),
            };
        }
        probe = p.parent().filter(|p| !p.as_os_str().is_empty());
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valid(dir: &Path) -> ExperimentConfig {
        ExperimentConfig { dataset_root: dir.to_path_buf(), output_dir: dir.join("out"), ..Default::default() }
    }

    #[test]
    fn minimal_json_takes_defaults() {
        let c = ExperimentConfig::from_json_str(
            r#"{"dataset_root": "/data", "output_dir": "/out", "model": {"backbone_id": "vgg16"}, "training": {"max_epochs": 3}}"#,
        )
        .unwrap();
        assert_eq!(c.model.backbone_id, BackboneId::Vgg16);
        assert_eq!(c.model.head_widths, vec![4096, 4096]);
        assert_eq!(c.training.max_epochs, 3);
        assert_eq!(c.training.batch_size, 32);
        assert_eq!(c.split.test_fraction, 0.3);
        assert_eq!(c.balancing_ratio, BalancingRatio::default());
    }

    #[test]
    fn unknown_fields_are_config_errors() {
        let err = ExperimentConfig::from_json_str(r#"{"dataset_rot": "/x"}"#).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn every_violation_is_listed() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = valid(dir.path());
        assert!(c.violations().is_empty(), "{:?}", c.violations());
        c.training.batch_size = 0;
        c.training.max_epochs = 0;
        c.split.test_fraction = 1.5;
        c.kfold = KFoldConfig { enabled: true, k: 1, train_only: true };
        c.model.dropout_rate = 2.0;
        assert_eq!(c.violations().len(), 5, "{:?}", c.violations());
        assert_eq!(c.validate().unwrap_err().exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn digest_ignores_output_dir_but_not_seed() {
        let dir = tempfile::tempdir().unwrap();
        let a = valid(dir.path());
        let b = ExperimentConfig { output_dir: "/elsewhere".into(), ..a.clone() };
        assert_eq!(a.digest(), b.digest());
        let c = ExperimentConfig { seed: 1, ..a.clone() };
        assert_ne!(a.digest(), c.digest());
        let id = a.run_id();
        assert!(id.starts_with("single-0-") && id.len() == "single-0-".len() + 8, "{id}");
    }

    #[test]
    fn exit_codes() {
        let div = ExperimentError::Train(TrainError::Divergence { epoch: 1, what: "training loss" });
        assert_eq!(div.exit_code(), EXIT_DIVERGENCE);
        assert_eq!(ExperimentError::Dataset(DatasetError::EmptyManifest).exit_code(), EXIT_DATASET);
        let nested = ExperimentError::Eval(EvalError::Train(TrainError::Divergence { epoch: 2, what: "x" }));
        assert!(nested.is_divergence());
    }
}
