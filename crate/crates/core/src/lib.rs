//! Transfer-learning pipeline for two-class (melanoma vs benign) skin-lesion
//! classification: dataset manifests and splits, VGG/AlexNet backbones with a
//! replacement classifier head, seeded training with early stopping, and
//! confusion-matrix based evaluation with k-fold cross-validation.

pub mod dataset;
pub mod model;
pub mod nn;
pub mod optim;
pub mod training;
pub mod evaluation;
pub mod experiment;
