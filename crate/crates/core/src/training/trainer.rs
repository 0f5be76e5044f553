use std::path::Path;

use log::{debug, info};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{early_stop_check, CheckpointPolicy, EpochRecord, StopDecision, TrainError, TrainedModel, TrainingConfig};
use crate::dataset::{ImageSet, Label};
use crate::model::Network;
use crate::nn::{log_softmax_rows, Real};
use crate::optim::make_optimizer;

/// RNG stream for the per-epoch data order.
const DATA_STREAM: u64 = 0;
/// RNG stream for dropout masks.
const DROPOUT_STREAM: u64 = 1;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mean categorical cross-entropy of `logits` against class indices,
/// accumulated in `f64`.
pub fn mean_cross_entropy<T: Real>(logits: &Array2<T>, targets: &[usize]) -> f64 {
    assert_eq!(logits.nrows(), targets.len(), "one target per row");
    let log_p = log_softmax_rows(logits);
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| -log_p[[i, t]].to_f64().expect("finite float"))
        .sum();
    total / targets.len().max(1) as f64
}

/// Evaluation-mode (dropout off) mean loss and accuracy over `set`.
pub fn evaluate_loss_accuracy<T: Real>(
    network: &Network<T>,
    set: &ImageSet<T>,
    batch_size: usize,
) -> Result<(f64, f64), TrainError> {
    if set.is_empty() {
        return Err(TrainError::Data("cannot evaluate on an empty set".into()));
    }
    let indices: Vec<usize> = (0..set.len()).collect();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, targets) = set.batch(chunk)?;
        let logits = network.logits(&x);
        loss_sum += mean_cross_entropy(&logits, &targets) * chunk.len() as f64;
        correct += crate::nn::argmax_rows(&logits).iter().zip(&targets).filter(|(p, t)| p == t).count();
    }
    Ok((loss_sum / set.len() as f64, correct as f64 / set.len() as f64))
}

/// Predicted labels for every item of `set`, in set order.
pub fn predict_labels<T: Real>(
    network: &Network<T>,
    set: &ImageSet<T>,
    batch_size: usize,
) -> Result<Vec<Label>, TrainError> {
    let indices: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, _) = set.batch(chunk)?;
        out.extend(network.predict(&x).into_iter().map(|c| Label::from_class_index(c).expect("two-class output")));
    }
    Ok(out)
}

/// Trains `network` on `train_set`, validating on `val_set` after every
/// epoch, until `max_epochs` or early stopping.
///
/// The data order is drawn from stream 0 of `config.seed` and dropout masks
/// from stream 1, so identical inputs give identical histories. With
/// `checkpoint_dir`, weight exports land in `epoch_<E>/` and `best/` as the
/// checkpoint policy dictates.
pub fn train<T: Real>(
    mut network: Network<T>,
    train_set: &ImageSet<T>,
    val_set: &ImageSet<T>,
    config: &TrainingConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainedModel<T>, TrainError> {
    let violations = config.violations();
    if !violations.is_empty() {
        return Err(TrainError::Config(violations));
    }
    if train_set.is_empty() {
        return Err(TrainError::Data("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(TrainError::Data("validation set is empty".into()));
    }
    let overlap = train_set.ids().intersection(&val_set.ids()).count();
    if overlap > 0 {
        return Err(TrainError::Data(format!("{overlap} ids are in both the training and validation sets")));
    }

    let mut optimizer = make_optimizer::<T>(config.optimizer_kind, config.effective_learning_rate(), config.momentum)?;
    let mut data_rng = stream_rng(config.seed, DATA_STREAM);
    let mut dropout_rng = stream_rng(config.seed, DROPOUT_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best_snapshot = None;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut data_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let (x, targets) = train_set.batch(chunk)?;
            let outcome = network.forward_backward(&x, &targets, &mut dropout_rng);
            let loss = outcome.loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(TrainError::Divergence { epoch, what: "training loss" });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += outcome.correct;
            network.apply_gradients(&outcome.grads, &mut optimizer);
        }
        let (val_loss, val_accuracy) = evaluate_loss_accuracy(&network, val_set, config.batch_size)?;
        if !val_loss.is_finite() {
            return Err(TrainError::Divergence { epoch, what: "validation loss" });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            val_loss,
            val_accuracy,
        };
        info!(
            "epoch {epoch}: loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
            record.train_loss, record.train_accuracy, record.val_loss, record.val_accuracy
        );
        history.push(record);

        let check = early_stop_check(&history, &config.early_stopping);
        if let Some(dir) = checkpoint_dir {
            if config.checkpoints == CheckpointPolicy::EveryEpoch {
                network.export(&dir.join(format!("epoch_{epoch}")))?;
            }
            if config.checkpoints != CheckpointPolicy::Off && check.best_epoch == epoch {
                network.export(&dir.join("best"))?;
            }
        }
        if check.best_epoch == epoch {
            best_snapshot = Some(network.snapshot());
        }
        if config.early_stopping.enabled && check.decision == StopDecision::Stop && epoch < config.max_epochs {
            debug!("early stop after epoch {epoch}, best epoch {}", check.best_epoch);
            stopped_early = true;
            break;
        }
    }

    let best_epoch = early_stop_check(&history, &config.early_stopping).best_epoch;
    if config.early_stopping.enabled && config.early_stopping.restore_best {
        if let Some(snapshot) = &best_snapshot {
            network.restore(snapshot);
        }
    }
    Ok(TrainedModel { network, history, stopped_early, best_epoch, config: config.clone() })
}
