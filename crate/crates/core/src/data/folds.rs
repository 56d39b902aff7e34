//! Subject-grouped, class-stratified k-fold splits.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetManifest;
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::networks::params::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FoldOptions {
    pub k: usize,
    pub seed: u64,
    /// Share of each fold's training scans moved to validation, drawn by subject.
    pub val_fraction: f64,
    /// Permit classes with fewer than `k` subjects; they then miss some test folds.
    pub allow_sparse_classes: bool,
}

impl Default for FoldOptions {
    fn default() -> Self {
        FoldOptions {
            k: 4,
            seed: 0,
            val_fraction: 0.1,
            allow_sparse_classes: false,
        }
    }
}

/// Scan indices into the manifest, each list sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn make_cv_folds(manifest: &DatasetManifest, opts: &FoldOptions) -> Result<Vec<FoldSplit>> {
    manifest.validate()?;
    let k = opts.k;
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    if !(0.0..1.0).contains(&opts.val_fraction) {
        return Err(Error::InvalidArgument(format!("val_fraction must be in [0, 1), got {}", opts.val_fraction)));
    }
    let subjects = manifest.subjects();
    let label_of = |s: &(String, Vec<usize>)| manifest.records[s.1[0]].label;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut group_of = vec![0usize; subjects.len()];
    let mut fold_scans = vec![0usize; k];
    for class in ClassLabel::ALL {
        let mut members: Vec<usize> = (0..subjects.len()).filter(|&s| label_of(&subjects[s]) == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k && !opts.allow_sparse_classes {
            return Err(Error::Data(format!(
                "class {class} has {} subjects, fewer than {k} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        members.sort_by_key(|&s| std::cmp::Reverse(subjects[s].1.len()));
        let mut class_subjects = vec![0usize; k];
        let mut class_scans = vec![0usize; k];
        for s in members {
            let f = (0..k)
                .min_by_key(|&f| (class_subjects[f], class_scans[f], fold_scans[f], f))
                .expect("k >= 2");
            let n = subjects[s].1.len();
            group_of[s] = f;
            class_subjects[f] += 1;
            class_scans[f] += n;
            fold_scans[f] += n;
        }
    }

    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let mut test = Vec::new();
        let mut train_subjects = Vec::new();
        for (s, subject) in subjects.iter().enumerate() {
            if group_of[s] == fold {
                test.extend_from_slice(&subject.1);
            } else {
                train_subjects.push(s);
            }
        }
        let val_subjects = pick_validation(manifest, &subjects, &train_subjects, opts.val_fraction, derive_seed(opts.seed, 100 + fold as u64));
        if opts.val_fraction > 0.0 && val_subjects.is_empty() {
            return Err(Error::Data(format!("fold {fold} has no subject available for validation")));
        }
        let mut train = Vec::new();
        let mut val = Vec::new();
        for s in train_subjects {
            if val_subjects.contains(&s) {
                val.extend_from_slice(&subjects[s].1);
            } else {
                train.extend_from_slice(&subjects[s].1);
            }
        }
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        folds.push(FoldSplit { fold, train, val, test });
    }
    Ok(folds)
}

/// Draws whole subjects from `train_subjects` until they hold at least
/// `round(fraction * training scans)` scans. Each draw comes from the class
/// with the most training subjects left (seeded order breaks ties), and a
/// class's last remaining training subject is never taken.
fn pick_validation(
    manifest: &DatasetManifest,
    subjects: &[(String, Vec<usize>)],
    train_subjects: &[usize],
    fraction: f64,
    seed: u64,
) -> BTreeSet<usize> {
    let label_of = |s: usize| manifest.records[subjects[s].1[0]].label.index();
    let train_scans: usize = train_subjects.iter().map(|&s| subjects[s].1.len()).sum();
    let target = (fraction * train_scans as f64).round() as usize;
    let mut per_class = [0usize; ClassLabel::COUNT];
    for &s in train_subjects {
        per_class[label_of(s)] += 1;
    }
    let mut candidates: Vec<usize> = train_subjects.to_vec();
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut picked = BTreeSet::new();
    let mut scans = 0;
    while scans < target {
        let next = candidates
            .iter()
            .enumerate()
            .filter(|(_, &s)| per_class[label_of(s)] >= 2)
            .max_by_key(|&(pos, &s)| (per_class[label_of(s)], std::cmp::Reverse(pos)));
        let Some((pos, &s)) = next else { break };
        candidates.remove(pos);
        per_class[label_of(s)] -= 1;
        scans += subjects[s].1.len();
        picked.insert(s);
    }
    picked
}

/// Single subject-grouped split into training and validation scans
/// (`test` is empty), stratified as in [`make_cv_folds`].
pub fn split_train_val(manifest: &DatasetManifest, val_fraction: f64, seed: u64) -> Result<FoldSplit> {
    manifest.validate()?;
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("val_fraction must be in (0, 1), got {val_fraction}")));
    }
    let subjects = manifest.subjects();
    let all: Vec<usize> = (0..subjects.len()).collect();
    let val_subjects = pick_validation(manifest, &subjects, &all, val_fraction, derive_seed(seed, 100));
    if val_subjects.is_empty() {
        return Err(Error::Data("no subject available for validation; every class has a single subject".into()));
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (s, subject) in subjects.iter().enumerate() {
        if val_subjects.contains(&s) {
            val.extend_from_slice(&subject.1);
        } else {
            train.extend_from_slice(&subject.1);
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(FoldSplit {
        fold: 0,
        train,
        val,
        test: Vec::new(),
    })
}

/// Subjects that appear in more than one role within a fold, or in more than one test set.
pub fn leakage_violations(manifest: &DatasetManifest, folds: &[FoldSplit]) -> Vec<String> {
    let mut out = Vec::new();
    let subject_set = |idx: &[usize]| -> BTreeSet<&str> { idx.iter().map(|&i| manifest.records[i].subject_id.as_str()).collect() };
    let mut test_owner: BTreeMap<&str, usize> = BTreeMap::new();
    for f in folds {
        let (tr, va, te) = (subject_set(&f.train), subject_set(&f.val), subject_set(&f.test));
        for s in tr.intersection(&va).chain(tr.intersection(&te)).chain(va.intersection(&te)) {
            out.push(format!("fold {}: subject {s} in two roles", f.fold));
        }
        for s in te {
            if let Some(prev) = test_owner.insert(s, f.fold) {
                out.push(format!("subject {s} tested in folds {prev} and {}", f.fold));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_classes_need_opt_in() {
        let m = DatasetManifest::synthetic([&[2; 4], &[2; 4], &[3], &[2]]);
        assert!(make_cv_folds(&m, &FoldOptions::default()).is_err());
        let opts = FoldOptions {
            allow_sparse_classes: true,
            ..Default::default()
        };
        let folds = make_cv_folds(&m, &opts).unwrap();
        let icsd_fold = folds.iter().position(|f| f.test.iter().any(|&i| m.records[i].label == ClassLabel::Icsd));
        let stroke_fold = folds.iter().position(|f| f.test.iter().any(|&i| m.records[i].label == ClassLabel::Stroke));
        assert_ne!(icsd_fold, stroke_fold);
        assert!(leakage_violations(&m, &folds).is_empty());
    }

    #[test]
    fn rejects_bad_options() {
        let m = DatasetManifest::synthetic([&[2; 4], &[], &[], &[]]);
        let bad_k = FoldOptions { k: 1, ..Default::default() };
        assert!(make_cv_folds(&m, &bad_k).is_err());
        let bad_val = FoldOptions {
            val_fraction: 1.0,
            ..Default::default()
        };
        assert!(make_cv_folds(&m, &bad_val).is_err());
    }
}
