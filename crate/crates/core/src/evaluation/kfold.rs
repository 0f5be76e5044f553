use std::collections::BTreeSet;
use std::path::PathBuf;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::{confusion_from_predictions, mean_and_std, metrics_from_confusion, ConfusionMatrix, EvalError, MetricSet};
use crate::dataset::{holdout, FoldPlan, ImageSet};
use crate::model::{build_model, ModelSpec, WeightCache};
use crate::nn::Real;
use crate::training::{predict_labels, train, write_history_csv, CheckpointPolicy, TrainError, TrainingConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    pub metrics: MetricSet,
    pub confusion: ConfusionMatrix,
    /// History CSV of the fold's training run, relative to the report.
    pub history_ref: String,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedFold {
    pub fold_index: usize,
    pub reason: String,
}

/// Per-fold results and their aggregate. Failed folds are listed separately
/// and excluded from the mean and (population) standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KFoldSummary {
    pub k: usize,
    pub per_fold: Vec<FoldResult>,
    pub failed_folds: Vec<FailedFold>,
    pub mean_metrics: Option<MetricSet>,
    pub std_metrics: Option<MetricSet>,
    pub warnings: Vec<String>,
}

/// One fold's work: train on `train_ids`, evaluate on `eval_ids`.
#[derive(Clone, Debug)]
pub struct FoldJob {
    pub fold_index: usize,
    pub train_ids: BTreeSet<String>,
    pub eval_ids: BTreeSet<String>,
    pub seed: u64,
}

fn is_fold_failure(err: &EvalError) -> bool {
    matches!(err, EvalError::Train(TrainError::Divergence { .. }) | EvalError::UndefinedMetric { .. })
}

/// Runs every fold of `plan` through `run_fold` (fold `f` gets seed
/// `base_seed + f`) and aggregates the results. Divergent folds and folds
/// whose metrics are undefined are recorded as failed; any other error aborts.
///
/// # Panics
///
/// Panics if a fold's training and evaluation ids overlap.
pub fn cross_validate<F>(plan: &FoldPlan, base_seed: u64, mut run_fold: F) -> Result<KFoldSummary, EvalError>
where
    F: FnMut(&FoldJob) -> Result<FoldResult, EvalError>,
{
    if plan.k < 2 {
        return Err(EvalError::Shape(format!("k-fold needs k >= 2, got {}", plan.k)));
    }
    let mut per_fold = Vec::new();
    let mut failed_folds = Vec::new();
    for fold_index in 0..plan.k {
        let job = FoldJob {
            fold_index,
            train_ids: plan.complement_ids(fold_index),
            eval_ids: plan.fold_ids(fold_index),
            seed: base_seed.wrapping_add(fold_index as u64),
        };
        assert!(job.train_ids.is_disjoint(&job.eval_ids), "fold {fold_index} leaks ids into its evaluation side");
        match run_fold(&job) {
            Ok(result) => per_fold.push(result),
            Err(err) if is_fold_failure(&err) => {
                warn!("fold {fold_index} failed: {err}");
                failed_folds.push(FailedFold { fold_index, reason: err.to_string() });
            }
            Err(err) => return Err(err),
        }
    }
    let mut warnings = Vec::new();
    if !failed_folds.is_empty() {
        warnings.push(format!(
            "{} of {} folds failed and are excluded from the k-fold aggregate",
            failed_folds.len(),
            plan.k
        ));
    }
    let metrics: Vec<MetricSet> = per_fold.iter().map(|f| f.metrics).collect();
    let aggregate = mean_and_std(&metrics);
    Ok(KFoldSummary {
        k: plan.k,
        per_fold,
        failed_folds,
        mean_metrics: aggregate.map(|a| a.0),
        std_metrics: aggregate.map(|a| a.1),
        warnings,
    })
}

#[derive(Clone, Debug)]
pub struct KFoldSettings {
    /// Share of each fold's training side held out for early stopping.
    pub validation_fraction: f64,
    pub stratified: bool,
    pub base_seed: u64,
    /// Fold histories are written to `<dir>/fold_<f>/history.csv` when set.
    pub output_dir: Option<PathBuf>,
}

/// K-fold cross-validation of `spec` over `images`: every fold trains a
/// freshly built model (pretrained weights reloaded) on the ids outside the
/// fold, minus a stratified validation carve, and is scored on the fold.
pub fn kfold_cross_validate<T: Real>(
    images: &ImageSet<T>,
    plan: &FoldPlan,
    spec: &ModelSpec,
    training: &TrainingConfig,
    cache: &WeightCache,
    settings: &KFoldSettings,
) -> Result<KFoldSummary, EvalError> {
    let plan_ids: BTreeSet<String> = plan.assignment.keys().cloned().collect();
    if images.ids() != plan_ids {
        return Err(EvalError::Shape("fold plan ids differ from the image set ids".into()));
    }
    let labeled = images.labeled_ids();
    cross_validate(plan, settings.base_seed, |job| {
        info!("fold {}/{}", job.fold_index + 1, plan.k);
        let train_side: Vec<_> = labeled.iter().filter(|(id, _)| job.train_ids.contains(id)).cloned().collect();
        let (fit_ids, val_ids) = holdout(&train_side, settings.validation_fraction, settings.stratified, job.seed)?;
        assert!(fit_ids.is_disjoint(&job.eval_ids) && val_ids.is_disjoint(&job.eval_ids));

        let (network, _) = build_model::<T>(spec, job.seed, cache)?;
        let config = TrainingConfig { seed: job.seed, checkpoints: CheckpointPolicy::Off, ..training.clone() };
        let trained = train(network, &images.subset(&fit_ids), &images.subset(&val_ids), &config, None)?;

        let eval_set = images.subset(&job.eval_ids);
        let predicted = predict_labels(&trained.network, &eval_set, config.batch_size)?;
        let confusion = confusion_from_predictions(&eval_set.labels(), &predicted)?;
        let metrics = metrics_from_confusion(&confusion)?;

        let history_ref = format!("fold_{}/history.csv", job.fold_index);
        if let Some(dir) = &settings.output_dir {
            let path = dir.join(&history_ref);
            std::fs::create_dir_all(path.parent().expect("fold directory"))?;
            write_history_csv(&trained.history, &path)?;
        }
        Ok(FoldResult {
            fold_index: job.fold_index,
            metrics,
            confusion,
            history_ref,
            epochs_run: trained.history.len(),
            best_epoch: trained.best_epoch,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_folds, Label};

    fn constant_majority(labels: &[(String, Label)]) -> impl FnMut(&FoldJob) -> Result<FoldResult, EvalError> + '_ {
        move |job| {
            let eval: Vec<Label> =
                labels.iter().filter(|(id, _)| job.eval_ids.contains(id)).map(|(_, l)| *l).collect();
            let predicted = vec![Label::Benign; eval.len()];
            let confusion = confusion_from_predictions(&eval, &predicted)?;
            Ok(FoldResult {
                fold_index: job.fold_index,
                metrics: metrics_from_confusion(&confusion)?,
                confusion,
                history_ref: String::new(),
                epochs_run: 0,
                best_epoch: 0,
            })
        }
    }

    #[test]
    fn constant_predictor_two_folds() {
        let labels: Vec<(String, Label)> =
            [("a", Label::Melanoma), ("b", Label::Melanoma), ("c", Label::Benign), ("d", Label::Benign)]
                .iter()
                .map(|(id, l)| (id.to_string(), *l))
                .collect();
        let plan = make_folds(&labels, 2, true, 0).unwrap();
        let summary = cross_validate(&plan, 0, constant_majority(&labels)).unwrap();
        assert_eq!(summary.per_fold.len(), 2);
        for f in &summary.per_fold {
            assert_eq!(f.metrics.accuracy, 0.5);
        }
        assert_eq!(summary.mean_metrics.unwrap().accuracy, 0.5);
        assert_eq!(summary.std_metrics.unwrap().accuracy, 0.0);
    }

    #[test]
    fn divergent_folds_are_excluded_with_warning() {
        let labels: Vec<(String, Label)> = (0..6)
            .map(|i| (format!("id{i}"), if i % 2 == 0 { Label::Melanoma } else { Label::Benign }))
            .collect();
        let plan = make_folds(&labels, 3, true, 0).unwrap();
        let mut inner = constant_majority(&labels);
        let summary = cross_validate(&plan, 10, |job| {
            assert_eq!(job.seed, 10 + job.fold_index as u64);
            if job.fold_index == 1 {
                Err(TrainError::Divergence { epoch: 2, what: "training loss" }.into())
            } else {
                inner(job)
            }
        })
        .unwrap();
        assert_eq!(summary.per_fold.len(), 2);
        assert_eq!(summary.failed_folds.len(), 1);
        assert_eq!(summary.failed_folds[0].fold_index, 1);
        assert_eq!(summary.warnings.len(), 1);
    }

    #[test]
    fn other_errors_abort() {
        let labels: Vec<(String, Label)> =
            (0..4).map(|i| (format!("id{i}"), if i < 2 { Label::Melanoma } else { Label::Benign })).collect();
        let plan = make_folds(&labels, 2, true, 0).unwrap();
        let out = cross_validate(&plan, 0, |_| Err(EvalError::Shape("boom".into())));
        assert!(matches!(out, Err(EvalError::Shape(_))));
    }
}
