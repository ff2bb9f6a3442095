use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DataError, Dataset, Domain};

pub const FOLD_COUNT: usize = 5;

/// How the ID data is divided before cross-validation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FoldPlan {
    /// Fraction of labeled ID subjects held out as a fixed ID test set shared
    /// by all folds. The rest is partitioned into five train/validation folds.
    pub id_test_fraction: f64,
}

impl Default for FoldPlan {
    fn default() -> Self {
        Self { id_test_fraction: 0.2 }
    }
}

/// Subject indices (into `Dataset::subjects`) for one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train_labeled: Vec<usize>,
    pub validation: Vec<usize>,
    pub test_id: Vec<usize>,
    pub train_unlabeled: Vec<usize>,
    pub test_ood: Vec<usize>,
}

impl FoldSplit {
    pub fn ids<'a>(&self, dataset: &'a Dataset, part: &[usize]) -> Vec<&'a str> {
        part.iter().map(|&i| dataset.subjects[i].id.as_str()).collect()
    }
}

/// Shuffles each stratum and concatenates strata in key order, so that taking
/// every fifth element yields stratified chunks.
fn stratified_order<K: Ord>(groups: BTreeMap<K, Vec<usize>>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order = Vec::new();
    for (_, mut members) in groups {
        members.shuffle(rng);
        order.extend(members);
    }
    order
}

pub fn make_folds(dataset: &Dataset, seed: u64) -> Result<Vec<FoldSplit>, DataError> {
    make_folds_with(dataset, seed, FoldPlan::default())
}

/// Five folds: each trains on 80% of the ID cross-validation pool, validates
/// on the remaining 20%, uses 20% of the OOD subjects as unlabeled training
/// data and the other 80% as the OOD test set.
pub fn make_folds_with(dataset: &Dataset, seed: u64, plan: FoldPlan) -> Result<Vec<FoldSplit>, DataError> {
    if !(0.0..1.0).contains(&plan.id_test_fraction) {
        return Err(DataError::InvalidConfig(format!(
            "id_test_fraction {} outside [0, 1)",
            plan.id_test_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut id_groups: BTreeMap<(String, u8), Vec<usize>> = BTreeMap::new();
    let mut ood_groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.subjects.iter().enumerate() {
        match (s.domain, s.label) {
            (Domain::Id, Some(label)) => id_groups.entry((s.site.clone(), label)).or_default().push(i),
            (Domain::Id, None) => {}
            (Domain::Ood, _) => ood_groups.entry(s.site.clone()).or_default().push(i),
        }
    }

    let id_order = stratified_order(id_groups, &mut rng);
    let f = plan.id_test_fraction;
    let mut test_id = Vec::new();
    let mut pool = Vec::new();
    for (p, &idx) in id_order.iter().enumerate() {
        // spreads floor(n * f) test picks evenly over the stratified order
        if ((p + 1) as f64 * f).floor() > (p as f64 * f).floor() {
            test_id.push(idx);
        } else {
            pool.push(idx);
        }
    }

    for class in [0u8, 1] {
        let n = pool
            .iter()
            .filter(|&&i| dataset.subjects[i].label == Some(class))
            .count();
        if n < FOLD_COUNT {
            return Err(DataError::TooFewSubjects(format!(
                "{n} labeled ID subjects of class {class} available for cross-validation, need {FOLD_COUNT}"
            )));
        }
    }
    let ood_order = stratified_order(ood_groups, &mut rng);
    if ood_order.len() < FOLD_COUNT {
        return Err(DataError::TooFewSubjects(format!(
            "{} OOD subjects, need {FOLD_COUNT}",
            ood_order.len()
        )));
    }

    let chunk = |order: &[usize], f: usize| -> Vec<usize> {
        order
            .iter()
            .enumerate()
            .filter(|(p, _)| p % FOLD_COUNT == f)
            .map(|(_, &i)| i)
            .collect()
    };
    let rest = |order: &[usize], f: usize| -> Vec<usize> {
        order
            .iter()
            .enumerate()
            .filter(|(p, _)| p % FOLD_COUNT != f)
            .map(|(_, &i)| i)
            .collect()
    };
    let mut test_sorted = test_id;
    test_sorted.sort_unstable();
    Ok((0..FOLD_COUNT)
        .map(|f| {
            let mut s = FoldSplit {
                fold: f,
                train_labeled: rest(&pool, f),
                validation: chunk(&pool, f),
                test_id: test_sorted.clone(),
                train_unlabeled: chunk(&ood_order, f),
                test_ood: rest(&ood_order, f),
            };
            for part in [
                &mut s.train_labeled,
                &mut s.validation,
                &mut s.train_unlabeled,
                &mut s.test_ood,
            ] {
                part.sort_unstable();
            }
            s
        })
        .collect())
}
