use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::plot::plot_learning_curves;
use super::{ExperimentConfig, ExperimentError, Suite};
use crate::dataset::{
    build_manifest, holdout, make_folds, split_train_test, DatasetManifest, ImageSet, PreprocessSpec, SplitPlan,
};
use crate::evaluation::{
    aggregate_reports, confusion_from_predictions, kfold_cross_validate, metrics_from_confusion, EvaluationReport,
    KFoldSettings, ReportSettings, METRIC_DEFINITIONS, REPORT_SCHEMA_VERSION,
};
use crate::model::{build_model, list_removable_head_layers, FreezePolicy, ModelError, ModelSpec, WeightCache};
use crate::optim::{OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
use crate::training::{predict_labels, train, write_history_csv, TrainingConfig};

pub const CONFIG_SNAPSHOT_FILE: &str = "config.json";
pub const ABLATION_HEADER: [&str; 7] = [
    "layer",
    "baseline_val_accuracy",
    "ablated_val_accuracy",
    "delta_val_accuracy",
    "baseline_test_accuracy",
    "ablated_test_accuracy",
    "delta_test_accuracy",
];

/// One training run inside a suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberPlan {
    /// Row name in comparison tables and plot legends.
    pub label: String,
    /// Subdirectory under `<run_dir>/runs/`.
    pub dir: String,
    pub model: ModelSpec,
    pub training: TrainingConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablated_layer: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub suite: Suite,
    pub config_digest: String,
    pub members: Vec<MemberPlan>,
}

/// Files produced by one member run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub label: String,
    pub run_dir: PathBuf,
    pub config_digest: String,
    pub report_path: PathBuf,
    pub history_paths: Vec<PathBuf>,
    pub plot_paths: Vec<PathBuf>,
    pub model_export_path: PathBuf,
    pub summary_path: PathBuf,
    pub config_snapshot_path: PathBuf,
}

impl RunArtifacts {
    pub fn all_paths(&self) -> Vec<&Path> {
        let mut out: Vec<&Path> =
            vec![&self.report_path, &self.model_export_path, &self.summary_path, &self.config_snapshot_path];
        out.extend(self.history_paths.iter().map(PathBuf::as_path));
        out.extend(self.plot_paths.iter().map(PathBuf::as_path));
        out
    }

    /// Listed paths that are missing, empty files or empty directories.
    pub fn missing(&self) -> Vec<PathBuf> {
        self.all_paths()
            .into_iter()
            .filter(|p| match std::fs::metadata(p) {
                Ok(m) if m.is_dir() => std::fs::read_dir(p).map(|mut d| d.next().is_none()).unwrap_or(true),
                Ok(m) => m.len() == 0,
                Err(_) => true,
            })
            .map(Path::to_path_buf)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberFailure {
    pub label: String,
    pub reason: String,
    pub exit_code: i32,
}

/// Everything a suite produced; also written as `artifacts.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub suite: Suite,
    pub config_digest: String,
    pub config_snapshot_path: PathBuf,
    pub manifest_path: PathBuf,
    pub runs: Vec<RunArtifacts>,
    pub failures: Vec<MemberFailure>,
    pub comparison_paths: Vec<PathBuf>,
    pub suite_plot_paths: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablation_table: Option<PathBuf>,
    pub index_path: PathBuf,
}

impl ExperimentOutcome {
    /// Some suite members failed but others produced results.
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

fn member(label: impl Into<String>, dir: impl Into<String>, model: ModelSpec, training: TrainingConfig) -> MemberPlan {
    MemberPlan { label: label.into(), dir: dir.into(), model, training, ablated_layer: None }
}

/// Validates `config` and lists the runs its suite will perform.
pub fn plan_experiment(config: &ExperimentConfig) -> Result<ExperimentPlan, ExperimentError> {
    config.validate()?;
    let config = config.normalized();
    let model = config.model.clone();
    let training = config.training.clone();
    let members = match config.suite {
        Suite::Single if config.transfer_baseline => vec![
            member(
                "Normal transfer learning",
                "normal_transfer",
                ModelSpec { freeze: FreezePolicy::whole_backbone(), ..model.clone() },
                training.clone(),
            ),
            member("Modified transfer learning", "modified_transfer", model, training),
        ],
        Suite::Single => vec![member(model.backbone_id.display_name(), model.backbone_id.label(), model, training)],
        Suite::CompareArchitectures => config
            .architectures
            .iter()
            .map(|b| {
                member(b.display_name(), b.label(), ModelSpec { backbone_id: b.clone(), ..model.clone() }, training.clone())
            })
            .collect(),
        Suite::CompareOptimizers => [(OptimizerKind::Adam, "Adam"), (OptimizerKind::Sgd, "SGD")]
            .into_iter()
            .map(|(kind, label)| {
                member(label, kind.label(), model.clone(), TrainingConfig { optimizer_kind: kind, ..training.clone() })
            })
            .collect(),
        Suite::Ablation => {
            let removable = list_removable_head_layers(&model);
            if removable.is_empty() {
                return Err(ExperimentError::AblationImpossible("the model head has no removable layers".into()));
            }
            let mut members = vec![member("baseline", "baseline", model.clone(), training.clone())];
            for layer in removable {
                let mut m = member(
                    format!("without {layer}"),
                    format!("without_{layer}"),
                    model.without_head_layer(&layer)?,
                    training.clone(),
                );
                m.ablated_layer = Some(layer);
                members.push(m);
            }
            members
        }
    };
    Ok(ExperimentPlan {
        run_id: config.run_id(),
        run_dir: config.run_dir(),
        suite: config.suite,
        config_digest: config.digest(),
        members,
    })
}

/// Manifest, test split and validation carve shared by every suite member.
struct PreparedData {
    manifest: DatasetManifest,
    split: SplitPlan,
    fit_ids: BTreeSet<String>,
    val_ids: BTreeSet<String>,
}

#[derive(Serialize)]
struct SplitFile<'a> {
    seed: u64,
    test_fraction: f64,
    validation_fraction: f64,
    stratified: bool,
    train_ids: &'a BTreeSet<String>,
    validation_ids: &'a BTreeSet<String>,
    test_ids: &'a BTreeSet<String>,
}

fn prepare_data(config: &ExperimentConfig, run_dir: &Path) -> Result<PreparedData, ExperimentError> {
    let built = build_manifest(&config.dataset_root, config.seed, config.balancing_ratio)?;
    built.manifest.write_csv(&run_dir.join("manifest.csv"))?;
    built.write_rejects(&run_dir.join("rejects.csv"))?;
    if !built.rejects.is_empty() {
        warn!("{} files rejected; see rejects.csv", built.rejects.len());
    }
    let manifest = built.manifest;
    info!(
        "manifest: {} images ({} melanoma, {} benign)",
        manifest.len(),
        manifest.count(crate::dataset::Label::Melanoma),
        manifest.count(crate::dataset::Label::Benign)
    );
    let split = split_train_test(&manifest, config.split.test_fraction, config.split.stratified, config.seed)?;
    let train_side: Vec<_> =
        manifest.labeled_ids().into_iter().filter(|(id, _)| split.train_ids.contains(id)).collect();
    let (fit_ids, val_ids) =
        holdout(&train_side, config.validation_fraction, config.split.stratified, config.seed.wrapping_add(1))?;
    let file = SplitFile {
        seed: config.seed,
        test_fraction: config.split.test_fraction,
        validation_fraction: config.validation_fraction,
        stratified: config.split.stratified,
        train_ids: &fit_ids,
        validation_ids: &val_ids,
        test_ids: &split.test_ids,
    };
    std::fs::write(run_dir.join("split.json"), serde_json::to_string_pretty(&file)? + "\n")?;
    Ok(PreparedData { manifest, split, fit_ids, val_ids })
}

fn run_member(
    config: &ExperimentConfig,
    data: &PreparedData,
    plan: &MemberPlan,
    dir: &Path,
    cache: &WeightCache,
    digest: &str,
) -> Result<(RunArtifacts, EvaluationReport), ExperimentError> {
    info!("run `{}` in {}", plan.label, dir.display());
    std::fs::create_dir_all(dir)?;
    let preprocess = PreprocessSpec::for_backbone(plan.model.backbone_id.clone());
    let all_ids: BTreeSet<String> = data.manifest.samples().iter().map(|s| s.id.clone()).collect();
    let images = ImageSet::<f32>::from_manifest(&data.manifest, &all_ids, &preprocess, config.preload)?;
    let fit = images.subset(&data.fit_ids);
    let val = images.subset(&data.val_ids);
    let test = images.subset(&data.split.test_ids);

    let (network, summary) = build_model::<f32>(&plan.model, config.seed, cache)?;
    let summary_path = dir.join("model_summary.csv");
    summary.write_csv(&summary_path)?;
    let pretrained_digest = network.pretrained_digest().map(str::to_string);

    let trained = train(network, &fit, &val, &plan.training, Some(&dir.join("checkpoints")))?;
    let history_path = dir.join("history.csv");
    write_history_csv(&trained.history, &history_path)?;
    let model_export_path = dir.join("model");
    trained.network.export(&model_export_path)?;

    let predicted = predict_labels(&trained.network, &test, plan.training.batch_size)?;
    let test_confusion = confusion_from_predictions(&test.labels(), &predicted)?;
    let test_metrics = metrics_from_confusion(&test_confusion)?;

    let mut history_paths = vec![history_path];
    let mut warnings = Vec::new();
    let kfold = if config.kfold.enabled {
        let fold_ids = if config.kfold.train_only { data.split.train_ids.clone() } else { all_ids.clone() };
        let fold_set = images.subset(&fold_ids);
        let folds = make_folds(&fold_set.labeled_ids(), config.kfold.k, config.split.stratified, config.seed.wrapping_add(2))?;
        let settings = KFoldSettings {
            validation_fraction: config.validation_fraction,
            stratified: config.split.stratified,
            base_seed: config.seed,
            output_dir: Some(dir.join("kfold")),
        };
        let summary = kfold_cross_validate(&fold_set, &folds, &plan.model, &plan.training, cache, &settings)?;
        history_paths.extend(summary.per_fold.iter().map(|f| dir.join("kfold").join(&f.history_ref)));
        warnings.extend(summary.warnings.iter().cloned());
        Some(summary)
    } else {
        None
    };

    let es = plan.training.early_stopping;
    let kept_epoch = if es.enabled && es.restore_best { trained.best_epoch } else { trained.history.len() };
    let kept = trained.history[kept_epoch - 1];
    let report = EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        label: plan.label.clone(),
        architecture: plan.model.backbone_id.label().to_string(),
        config_digest: digest.to_string(),
        metric_definitions: METRIC_DEFINITIONS.to_string(),
        pretrained_digest,
        train_accuracy: kept.train_accuracy,
        validation_accuracy: kept.val_accuracy,
        validation_loss: kept.val_loss,
        epochs_run: trained.history.len(),
        best_epoch: trained.best_epoch,
        stopped_early: trained.stopped_early,
        test_metrics,
        test_confusion,
        kfold,
        history_ref: "history.csv".into(),
        settings: ReportSettings {
            model: plan.model.clone(),
            training: plan.training.clone(),
            effective_learning_rate: plan.training.effective_learning_rate(),
            adam_beta1: ADAM_BETA1,
            adam_beta2: ADAM_BETA2,
            adam_epsilon: ADAM_EPSILON,
            test_fraction: config.split.test_fraction,
            validation_fraction: config.validation_fraction,
            stratified: config.split.stratified,
            balancing_ratio: config.balancing_ratio.to_f64(),
            train_size: fit.len(),
            validation_size: val.len(),
            test_size: test.len(),
        },
        warnings,
    };
    let report_path = dir.join("report.json");
    report.write_json(&report_path)?;

    let plot = plot_learning_curves(
        &[(plan.label.clone(), trained.history.clone())],
        &dir.join("plots").join("learning_curves.png"),
        &format!("{} learning curves", plan.label),
    )?;
    let plot_paths = plot.image.into_iter().chain([plot.data]).collect();

    let artifacts = RunArtifacts {
        label: plan.label.clone(),
        run_dir: dir.to_path_buf(),
        config_digest: digest.to_string(),
        report_path,
        history_paths,
        plot_paths,
        model_export_path,
        summary_path,
        config_snapshot_path: dir.parent().and_then(Path::parent).unwrap_or(dir).join(CONFIG_SNAPSHOT_FILE),
    };
    Ok((artifacts, report))
}

type MemberResult = Result<(RunArtifacts, EvaluationReport), ExperimentError>;

/// Runs the members, at most `jobs` at a time, returning results in plan
/// order. Members share nothing mutable and write to disjoint directories.
fn run_members(
    config: &ExperimentConfig,
    data: &PreparedData,
    members: &[MemberPlan],
    run_dir: &Path,
    cache: &WeightCache,
    digest: &str,
    jobs: usize,
) -> Vec<MemberResult> {
    let dir_of = |m: &MemberPlan| run_dir.join("runs").join(&m.dir);
    if jobs <= 1 || members.len() <= 1 {
        return members.iter().map(|m| run_member(config, data, m, &dir_of(m), cache, digest)).collect();
    }
    let mut results = Vec::with_capacity(members.len());
    for wave in members.chunks(jobs) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|m| scope.spawn(move || run_member(config, data, m, &dir_of(m), cache, digest)))
                .collect();
            for h in handles {
                results.push(h.join().expect("suite member panicked"));
            }
        });
    }
    results
}

fn suite_caption(suite: Suite) -> &'static str {
    match suite {
        Suite::Single => "Normal (whole backbone frozen) vs modified transfer learning",
        Suite::CompareArchitectures => "Architecture comparison",
        Suite::CompareOptimizers => "Comparison of SGD and Adam optimizers",
        Suite::Ablation => "Head-layer ablation",
    }
}

fn write_ablation_table(
    path: &Path,
    plan: &ExperimentPlan,
    results: &[(usize, EvaluationReport)],
) -> Result<Option<PathBuf>, ExperimentError> {
    let Some((_, baseline)) = results.iter().find(|(i, _)| plan.members[*i].ablated_layer.is_none()) else {
        warn!("baseline run failed; no ablation deltas");
        return Ok(None);
    };
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(ABLATION_HEADER)?;
    for (i, report) in results {
        if let Some(layer) = &plan.members[*i].ablated_layer {
            w.write_record([
                layer.clone(),
                baseline.validation_accuracy.to_string(),
                report.validation_accuracy.to_string(),
                (report.validation_accuracy - baseline.validation_accuracy).to_string(),
                baseline.test_metrics.accuracy.to_string(),
                report.test_metrics.accuracy.to_string(),
                (report.test_metrics.accuracy - baseline.test_metrics.accuracy).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(Some(path.to_path_buf()))
}

/// Fails fast when a pretrained member's weight file is absent.
fn check_pretrained_weights(plan: &ExperimentPlan, cache: &WeightCache) -> Result<(), ExperimentError> {
    for m in plan.members.iter().filter(|m| m.model.pretrained) {
        let path = m.model.weights_path.clone().unwrap_or_else(|| cache.path_for(&m.model.backbone_id));
        if !path.is_file() {
            return Err(ModelError::WeightLoad {
                path,
                reason: format!("pretrained {} weights not found", m.model.backbone_id.display_name()),
            }
            .into());
        }
    }
    Ok(())
}

/// Runs the configured suite end to end. The config snapshot is written
/// before anything else; all artifacts land under `<output_dir>/<run_id>/`.
///
/// A member that diverges is recorded in `failures` while the others carry
/// on; if every member diverges the first divergence is returned as the error.
pub fn run_experiment(config: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutcome, ExperimentError> {
    let plan = plan_experiment(config)?;
    let config = config.normalized();
    let cache = config.weight_cache.clone().map(WeightCache::new).unwrap_or_else(WeightCache::from_env);
    check_pretrained_weights(&plan, &cache)?;
    let run_dir = plan.run_dir.clone();
    std::fs::create_dir_all(&run_dir)?;
    let config_snapshot_path = run_dir.join(CONFIG_SNAPSHOT_FILE);
    std::fs::write(&config_snapshot_path, serde_json::to_string_pretty(&config)? + "\n")?;
    info!("run {} ({} members)", plan.run_id, plan.members.len());

    let data = prepare_data(&config, &run_dir)?;
    let results = run_members(&config, &data, &plan.members, &run_dir, &cache, &plan.config_digest, jobs.max(1));

    let mut runs = Vec::new();
    let mut reports: Vec<(usize, EvaluationReport)> = Vec::new();
    let mut failures = Vec::new();
    let mut first_divergence = None;
    for (i, result) in results.into_iter().enumerate() {
        match result {
            Ok((artifacts, report)) => {
                runs.push(artifacts);
                reports.push((i, report));
            }
            Err(err) if err.is_divergence() => {
                warn!("run `{}` failed: {err}", plan.members[i].label);
                failures.push(MemberFailure {
                    label: plan.members[i].label.clone(),
                    reason: err.to_string(),
                    exit_code: err.exit_code(),
                });
                first_divergence.get_or_insert(err);
            }
            Err(err) => return Err(err),
        }
    }
    if runs.is_empty() {
        return Err(first_divergence.expect("at least one member ran"));
    }

    let mut comparison_paths = Vec::new();
    let mut suite_plot_paths = Vec::new();
    if plan.members.len() > 1 {
        let only_reports: Vec<EvaluationReport> = reports.iter().map(|(_, r)| r.clone()).collect();
        let table = aggregate_reports(&only_reports)?;
        let (csv_path, text_path) = (run_dir.join("comparison.csv"), run_dir.join("comparison.txt"));
        table.write(&csv_path, &text_path)?;
        comparison_paths = vec![csv_path, text_path];

        let mut series = Vec::new();
        for (i, _) in &reports {
            let member_dir = run_dir.join("runs").join(&plan.members[*i].dir);
            let history = crate::training::read_history_csv(&member_dir.join("history.csv"))?;
            series.push((plan.members[*i].label.clone(), history));
        }
        let plot = plot_learning_curves(
            &series,
            &run_dir.join("plots").join(format!("{}.png", plan.suite.label())),
            suite_caption(plan.suite),
        )?;
        suite_plot_paths.extend(plot.image.into_iter().chain([plot.data]));
    }
    let ablation_table = if plan.suite == Suite::Ablation {
        write_ablation_table(&run_dir.join("ablation_deltas.csv"), &plan, &reports)?
    } else {
        None
    };

    let outcome = ExperimentOutcome {
        run_id: plan.run_id.clone(),
        run_dir: run_dir.clone(),
        suite: plan.suite,
        config_digest: plan.config_digest.clone(),
        config_snapshot_path,
        manifest_path: run_dir.join("manifest.csv"),
        runs,
        failures,
        comparison_paths,
        suite_plot_paths,
        ablation_table,
        index_path: run_dir.join("artifacts.json"),
    };
    std::fs::write(&outcome.index_path, serde_json::to_string_pretty(&outcome)? + "\n")?;
    Ok(outcome)
}

/// Adam and SGD runs that differ only in the optimizer.
pub fn run_optimizer_comparison(config: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutcome, ExperimentError> {
    run_experiment(&ExperimentConfig { suite: Suite::CompareOptimizers, ..config.clone() }, jobs)
}

/// A baseline run plus one run per removable head layer, with a table of
/// accuracy deltas against the baseline.
pub fn run_ablation(config: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutcome, ExperimentError> {
    run_experiment(&ExperimentConfig { suite: Suite::Ablation, ..config.clone() }, jobs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BackboneId;

    fn config(dir: &Path, suite: Suite) -> ExperimentConfig {
        ExperimentConfig { dataset_root: dir.into(), output_dir: dir.join("out"), suite, ..Default::default() }
    }

    #[test]
    fn ablation_plan_has_baseline_plus_one_per_layer() {
        let dir = tempfile::tempdir().unwrap();
        let plan = plan_experiment(&config(dir.path(), Suite::Ablation)).unwrap();
        let labels: Vec<_> = plan.members.iter().map(|m| m.label.as_str()).collect();
        assert_eq!(labels, ["baseline", "without fc1", "without fc2"]);
        assert_eq!(plan.members[2].model.active_head_layers(), vec![("fc1".to_string(), 4096)]);
    }

    #[test]
    fn ablation_without_head_layers_is_impossible() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path(), Suite::Ablation);
        c.model.head_widths = vec![8];
        c.model.excluded_head_layers = vec!["fc1".into()];
        assert!(matches!(plan_experiment(&c), Err(ExperimentError::AblationImpossible(_))));
    }

    #[test]
    fn optimizer_plan_differs_only_in_optimizer() {
        let dir = tempfile::tempdir().unwrap();
        let plan = plan_experiment(&config(dir.path(), Suite::CompareOptimizers)).unwrap();
        let (a, b) = (&plan.members[0], &plan.members[1]);
        assert_eq!(a.model, b.model);
        assert_eq!(TrainingConfig { optimizer_kind: OptimizerKind::Adam, ..b.training.clone() }, a.training);
        assert_eq!(a.training.seed, b.training.seed);
    }

    #[test]
    fn architecture_plan_lists_three_backbones() {
        let dir = tempfile::tempdir().unwrap();
        let plan = plan_experiment(&config(dir.path(), Suite::CompareArchitectures)).unwrap();
        let backbones: Vec<_> = plan.members.iter().map(|m| m.model.backbone_id.clone()).collect();
        assert_eq!(backbones, [BackboneId::AlexnetModified, BackboneId::Vgg16, BackboneId::Vgg19]);
        assert!(plan.run_dir.ends_with(&plan.run_id));
    }
}
