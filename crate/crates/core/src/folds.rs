//! Patient-grouped k-fold assignment.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::PatchRecord;
use crate::error::{Error, Result};

/// Maps every patient to exactly one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
}

/// Shuffles the sorted distinct patient ids with `seed` and deals them
/// round-robin into `k` folds, so fold sizes differ by at most one patient
/// and the result does not depend on record order.
pub fn split_folds(records: &[PatchRecord], k: usize, seed: u64) -> Result<FoldSplit> {
    let mut patients: Vec<&str> = records.iter().map(|r| r.patient_id.as_str()).collect();
    patients.sort_unstable();
    patients.dedup();
    if k < 2 || patients.len() < k {
        return Err(Error::InvalidInput(format!(
            "{k}-fold split needs k >= 2 and at least k patients, found {}",
            patients.len()
        )));
    }
    patients.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let assignment = patients
        .into_iter()
        .enumerate()
        .map(|(i, p)| (String::from(p), i % k))
        .collect();
    Ok(FoldSplit { k, assignment })
}

impl FoldSplit {
    pub fn fold_of(&self, patient_id: &str) -> Option<usize> {
        self.assignment.get(patient_id).copied()
    }

    /// Number of patients per fold.
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = alloc::vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Indices of `records` held out in `fold`.
    pub fn validation_indices(&self, records: &[PatchRecord], fold: usize) -> Vec<usize> {
        self.indices(records, |f| f == fold)
    }

    /// Indices of `records` used for training when `fold` is held out.
    pub fn training_indices(&self, records: &[PatchRecord], fold: usize) -> Vec<usize> {
        self.indices(records, |f| f != fold)
    }

    fn indices(&self, records: &[PatchRecord], keep: impl Fn(usize) -> bool) -> Vec<usize> {
        records
            .iter()
            .enumerate()
            .filter(|(_, r)| self.fold_of(&r.patient_id).is_some_and(&keep))
            .map(|(i, _)| i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(patients: usize, per_patient: usize) -> Vec<PatchRecord> {
        (0..patients * per_patient)
            .map(|i| PatchRecord {
                patient_id: format!("P{:02}", i % patients),
                slide_id: format!("S{i}"),
                x: 0,
                y: 0,
                image_path: String::new(),
                mask_path: String::new(),
            })
            .collect()
    }

    #[test]
    fn four_patients_one_per_fold() {
        let split = split_folds(&records(4, 3), 4, 1).unwrap();
        assert_eq!(split.fold_sizes(), alloc::vec![1, 1, 1, 1]);
    }

    #[test]
    fn twenty_seven_patients() {
        let split = split_folds(&records(27, 2), 4, 9).unwrap();
        let mut sizes = split.fold_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, alloc::vec![6, 7, 7, 7]);
    }

    #[test]
    fn folds_are_patient_disjoint_and_cover_everything() {
        let recs = records(10, 4);
        let split = split_folds(&recs, 4, 3).unwrap();
        let mut seen = alloc::vec![0; recs.len()];
        for fold in 0..4 {
            let val = split.validation_indices(&recs, fold);
            let train = split.training_indices(&recs, fold);
            assert_eq!(val.len() + train.len(), recs.len());
            for &v in &val {
                seen[v] += 1;
                assert!(train
                    .iter()
                    .all(|&t| recs[t].patient_id != recs[v].patient_id));
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn record_order_does_not_matter() {
        let recs = records(9, 3);
        let mut shuffled = recs.clone();
        shuffled.reverse();
        shuffled.swap(0, 5);
        assert_eq!(
            split_folds(&recs, 4, 77).unwrap(),
            split_folds(&shuffled, 4, 77).unwrap()
        );
    }

    #[test]
    fn too_few_patients() {
        assert!(split_folds(&records(3, 5), 4, 0).is_err());
    }
}
