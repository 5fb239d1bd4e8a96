use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub total_lesion_volume: u64,
    pub image_path: Option<PathBuf>,
    pub mask_path: Option<PathBuf>,
}

impl CaseRecord {
    pub fn new(case_id: impl Into<String>, total_lesion_volume: u64) -> Self {
        Self {
            case_id: case_id.into(),
            total_lesion_volume,
            image_path: None,
            mask_path: None,
        }
    }
}

/// `case_id -> fold` for `k` folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, case_id: &str) -> Option<usize> {
        self.folds.get(case_id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.folds.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Summed lesion volume per fold.
    pub fn fold_totals(&self, cases: &[CaseRecord]) -> Vec<u64> {
        let mut totals = vec![0u64; self.k];
        for c in cases {
            if let Some(f) = self.fold_of(&c.case_id) {
                totals[f] += c.total_lesion_volume;
            }
        }
        totals
    }
}

fn validate(cases: &[CaseRecord], k: usize) -> Result<()> {
    if k < 2 || k > cases.len() {
        return Err(Error::InvalidFoldCount {
            cases: cases.len(),
            folds: k,
        });
    }
    let mut seen = HashSet::new();
    for c in cases {
        if !seen.insert(c.case_id.as_str()) {
            return Err(Error::DuplicateCase(c.case_id.clone()));
        }
    }
    Ok(())
}

/// Greedy volume balancing under a cardinality constraint.
///
/// Cases are shuffled with `seed` (this only decides the order among equal
/// volumes), stably sorted by descending volume, and each one goes to the
/// eligible fold with the smallest running total, then fewest cases, then
/// lowest index. With `n = q*k + r`, a fold is eligible while it holds fewer
/// than `q` cases, or exactly `q` while fewer than `r` folds have reached
/// `q + 1`. This keeps fold sizes within one of each other.
pub fn size_balanced_split(cases: &[CaseRecord], k: usize, seed: u64) -> Result<FoldAssignment> {
    validate(cases, k)?;
    let n = cases.len();
    let (q, r) = (n / k, n % k);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|&a, &b| cases[b].total_lesion_volume.cmp(&cases[a].total_lesion_volume));

    let mut totals = vec![0u64; k];
    let mut sizes = vec![0usize; k];
    let mut oversized = 0usize;
    let mut folds = BTreeMap::new();
    for i in order {
        let fold = (0..k)
            .filter(|&f| sizes[f] < q || (sizes[f] == q && oversized < r))
            .min_by_key(|&f| (totals[f], sizes[f], f))
            .expect("capacity covers every case");
        if sizes[fold] == q {
            oversized += 1;
        }
        sizes[fold] += 1;
        totals[fold] += cases[i].total_lesion_volume;
        folds.insert(cases[i].case_id.clone(), fold);
    }
    Ok(FoldAssignment { k, folds })
}

/// Shuffled round-robin assignment, the unbalanced baseline.
pub fn random_split(cases: &[CaseRecord], k: usize, seed: u64) -> Result<FoldAssignment> {
    validate(cases, k)?;
    let mut order: Vec<usize> = (0..cases.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds = order
        .into_iter()
        .enumerate()
        .map(|(pos, i)| (cases[i].case_id.clone(), pos % k))
        .collect();
    Ok(FoldAssignment { k, folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(vols: &[u64]) -> Vec<CaseRecord> {
        vols.iter()
            .enumerate()
            .map(|(i, &v)| CaseRecord::new(format!("c{i:03}"), v))
            .collect()
    }

    #[test]
    fn equal_volumes_fill_evenly() {
        let cases = records(&[10; 10]);
        let a = size_balanced_split(&cases, 5, 7).unwrap();
        assert_eq!(a.fold_sizes(), vec![2; 5]);
    }

    #[test]
    fn greedy_trace() {
        // 100 -> f0, 99 -> f1, 1 -> f1 (99 < 100), last 1 -> f0 (f1 is full)
        let cases = records(&[100, 99, 1, 1]);
        let a = size_balanced_split(&cases, 2, 0).unwrap();
        assert_eq!(a.fold_of("c000"), Some(0));
        assert_eq!(a.fold_of("c001"), Some(1));
        let mut totals = a.fold_totals(&cases);
        totals.sort();
        assert_eq!(totals, vec![100, 101]);
        assert_eq!(a.fold_sizes(), vec![2, 2]);
    }

    #[test]
    fn one_huge_case_cannot_starve_a_fold() {
        let cases = records(&[1000, 1, 1, 1, 1, 1, 1]);
        let a = size_balanced_split(&cases, 3, 1).unwrap();
        let sizes = a.fold_sizes();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "{sizes:?}");
    }

    #[test]
    fn zero_volumes_spread() {
        let cases = records(&[0; 7]);
        let a = size_balanced_split(&cases, 5, 3).unwrap();
        let mut sizes = a.fold_sizes();
        sizes.sort();
        assert_eq!(sizes, vec![1, 1, 1, 2, 2]);
    }

    #[test]
    fn deterministic_and_validated() {
        let cases = records(&[5, 5, 5, 3, 3, 9, 1, 1]);
        assert_eq!(
            size_balanced_split(&cases, 3, 42).unwrap(),
            size_balanced_split(&cases, 3, 42).unwrap()
        );
        assert!(matches!(size_balanced_split(&cases, 1, 0), Err(Error::InvalidFoldCount { .. })));
        assert!(matches!(size_balanced_split(&cases, 9, 0), Err(Error::InvalidFoldCount { .. })));
        let mut dup = cases.clone();
        dup.push(CaseRecord::new("c000", 1));
        assert!(matches!(size_balanced_split(&dup, 2, 0), Err(Error::DuplicateCase(_))));
        let r = random_split(&cases, 3, 0).unwrap();
        assert_eq!(r.folds.len(), 8);
    }
}
