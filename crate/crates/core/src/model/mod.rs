//! Backbone + classifier-head assembly, freezing and weight IO.

mod network;
mod spec;
pub mod weights;

use std::path::PathBuf;

pub use network::{
    apply_freeze_policy, build_model, BatchOutcome, Gradients, Layer, LayerSummary, ModelSummary, Network,
    WeightSnapshot, INPUT_CHANNELS,
};
pub use spec::{list_removable_head_layers, BackboneId, BackboneOp, FreezePolicy, ModelSpec, OUTPUT_LAYER_NAME};
pub use weights::WeightCache;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("freeze policy asks for {requested} frozen layers but {backbone} has {available}")]
    Policy { requested: usize, available: usize, backbone: String },
    #[error("cannot load weights from {}: {reason}", path.display())]
    WeightLoad { path: PathBuf, reason: String },
    #[error("cannot save weights: {0}")]
    WeightSave(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
