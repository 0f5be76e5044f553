//! Two-class image corpus: manifest building and balancing, train/test
//! splits, k-fold plans, and per-backbone preprocessing.

mod images;
mod manifest;
mod preprocess;
mod split;
pub mod synthetic;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use images::{ImageItem, ImageSet, Pixels};
pub use manifest::{build_manifest, BalancingRatio, DatasetManifest, LesionSample, ManifestBuild, Reject};
pub use preprocess::{preprocess_image, PreprocessSpec, ResizeMode, IMAGENET_MEANS, IMAGENET_STDS, TARGET_SIDE};
pub use split::{holdout, make_folds, split_train_test, FoldPlan, SplitPlan};

/// Lesion class. Melanoma is the positive class; the network's output index
/// is 0 for benign and 1 for melanoma.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Benign,
    Melanoma,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Benign, Label::Melanoma];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Melanoma => "melanoma",
        }
    }

    pub fn class_index(self) -> usize {
        match self {
            Label::Benign => 0,
            Label::Melanoma => 1,
        }
    }

    pub fn from_class_index(index: usize) -> Option<Label> {
        match index {
            0 => Some(Label::Benign),
            1 => Some(Label::Melanoma),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Melanoma
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "melanoma" => Ok(Label::Melanoma),
            "benign" => Ok(Label::Benign),
            other => Err(DatasetError::Format(format!("unknown label `{other}`"))),
        }
    }
}

/// Archive an image came from, inferred from its file name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    Isic,
    Mednode,
    Other,
}

impl SampleSource {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleSource::Isic => "isic",
            SampleSource::Mednode => "mednode",
            SampleSource::Other => "other",
        }
    }

    /// `ISIC_*` files come from ISIC, `mednode*` / `med-node*` from MED-NODE.
    pub fn infer(file_name: &str) -> Self {
        let lower = file_name.to_ascii_lowercase();
        if lower.starts_with("isic") {
            SampleSource::Isic
        } else if lower.starts_with("mednode") || lower.starts_with("med-node") || lower.starts_with("med_node") {
            SampleSource::Mednode
        } else {
            SampleSource::Other
        }
    }
}

impl FromStr for SampleSource {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "isic" => Ok(SampleSource::Isic),
            "mednode" => Ok(SampleSource::Mednode),
            "other" => Ok(SampleSource::Other),
            other => Err(DatasetError::Format(format!("unknown source `{other}`"))),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("dataset root {} is missing the `{class}/` directory", root.display())]
    MissingClassDir { root: PathBuf, class: Label },
    #[error("class `{0}` has no usable images")]
    EmptyClass(Label),
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("cannot decode image {}: {reason}", path.display())]
    Decode { path: PathBuf, reason: String },
    #[error("stratified split impossible: {0}")]
    Stratification(String),
    #[error("need at least {needed} samples for {needed} folds, got {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("malformed dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
