use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetManifest, Label};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
    pub test_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
}

/// Assignment of ids to `k` folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_ids(&self, fold: usize) -> BTreeSet<String> {
        self.assignment.iter().filter(|(_, &f)| f == fold).map(|(id, _)| id.clone()).collect()
    }

    /// Ids outside `fold`, i.e. the training side of that fold.
    pub fn complement_ids(&self, fold: usize) -> BTreeSet<String> {
        self.assignment.iter().filter(|(_, &f)| f != fold).map(|(id, _)| id.clone()).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Number of test items drawn from a population of `n`.
fn test_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

/// Per-class test quotas by largest remainder: each class gets the floor or
/// ceiling of `fraction * class_count`, and the quotas sum to the overall
/// rounded test size.
fn stratified_quotas(fraction: f64, counts: &[usize]) -> Vec<usize> {
    let total = test_count(fraction, counts.iter().sum());
    let exact: Vec<f64> = counts.iter().map(|&c| fraction * c as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().zip(counts).map(|(&e, &c)| (e.floor() as usize).min(c)).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // largest fractional part first; ties by class order
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).expect("finite").then(a.cmp(&b))
    });
    let mut missing = total.saturating_sub(quotas.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if missing == 0 {
            break;
        }
        if quotas[c] < counts[c] {
            quotas[c] += 1;
            missing -= 1;
        }
    }
    quotas
}

fn class_groups(items: &[(String, Label)]) -> Vec<(Label, Vec<String>)> {
    Label::ALL
        .iter()
        .map(|&label| {
            let mut ids: Vec<String> = items.iter().filter(|(_, l)| *l == label).map(|(id, _)| id.clone()).collect();
            ids.sort();
            (label, ids)
        })
        .collect()
}

/// Deterministic train/test split. With `stratified`, each class contributes
/// `fraction * class_count` test ids (rounded by largest remainder).
pub fn split_train_test(
    manifest: &DatasetManifest,
    test_fraction: f64,
    stratified: bool,
    seed: u64,
) -> Result<SplitPlan, DatasetError> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(DatasetError::Invalid(format!("test fraction {test_fraction} outside [0, 1]")));
    }
    if manifest.is_empty() {
        return Err(DatasetError::EmptyManifest);
    }
    let items = manifest.labeled_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_ids = BTreeSet::new();
    if stratified {
        let groups = class_groups(&items);
        if test_fraction > 0.0 {
            if let Some((label, _)) = groups.iter().find(|(_, ids)| ids.is_empty()) {
                return Err(DatasetError::Stratification(format!(
                    "class `{label}` has no samples to place in the test split"
                )));
            }
        }
        let counts: Vec<usize> = groups.iter().map(|(_, ids)| ids.len()).collect();
        let quotas = stratified_quotas(test_fraction, &counts);
        for ((_, mut ids), quota) in groups.into_iter().zip(quotas) {
            ids.shuffle(&mut rng);
            test_ids.extend(ids.into_iter().take(quota));
        }
    } else {
        let mut ids: Vec<String> = items.iter().map(|(id, _)| id.clone()).collect();
        ids.shuffle(&mut rng);
        let n = test_count(test_fraction, ids.len());
        test_ids.extend(ids.into_iter().take(n));
    }
    let train_ids = items.iter().map(|(id, _)| id.clone()).filter(|id| !test_ids.contains(id)).collect();
    Ok(SplitPlan { train_ids, test_ids, test_fraction, stratified, seed })
}

/// Stratified (or plain) subset selection on an arbitrary labeled id list,
/// used to carve validation sets out of training ids.
pub fn holdout(
    items: &[(String, Label)],
    fraction: f64,
    stratified: bool,
    seed: u64,
) -> Result<(BTreeSet<String>, BTreeSet<String>), DatasetError> {
    let manifest_like = DatasetManifest::from_samples(
        "",
        items
            .iter()
            .map(|(id, label)| super::LesionSample {
                id: id.clone(),
                image_path: Default::default(),
                label: *label,
                source: super::SampleSource::Other,
            })
            .collect(),
        seed,
        Default::default(),
    )?;
    let plan = split_train_test(&manifest_like, fraction, stratified, seed)?;
    Ok((plan.train_ids, plan.test_ids))
}

/// Deterministic k-fold assignment. Ids are dealt round-robin (class by
/// class when stratified, continuing the fold counter across classes), so
/// the first `n mod k` folds hold one extra id and per-class fold counts
/// differ by at most one.
pub fn make_folds(items: &[(String, Label)], k: usize, stratified: bool, seed: u64) -> Result<FoldPlan, DatasetError> {
    if k < 2 {
        return Err(DatasetError::Invalid(format!("k must be >= 2, got {k}")));
    }
    if items.len() < k {
        return Err(DatasetError::InsufficientData { needed: k, available: items.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequences: Vec<Vec<String>> = if stratified {
        class_groups(items).into_iter().map(|(_, ids)| ids).collect()
    } else {
        let mut ids: Vec<String> = items.iter().map(|(id, _)| id.clone()).collect();
        ids.sort();
        vec![ids]
    };
    let mut assignment = BTreeMap::new();
    let mut next = 0usize;
    for mut ids in sequences {
        ids.shuffle(&mut rng);
        for id in ids {
            if assignment.insert(id.clone(), next % k).is_some() {
                return Err(DatasetError::Invalid(format!("duplicate id `{id}`")));
            }
            next += 1;
        }
    }
    Ok(FoldPlan { k, assignment })
}
