use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::ReviewRecord;
use crate::error::{Error, Result};

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<ReviewRecord>,
    pub validation: Vec<ReviewRecord>,
    pub test: Vec<ReviewRecord>,
    pub seed: u64,
}

/// Sizes of the three parts for `n` records. Validation and test get at
/// least one record each.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> (usize, usize, usize) {
    let val = ((n as f64 * ratios.1).round() as usize).max(1);
    let train = ((n as f64 * ratios.0).round() as usize).min(n.saturating_sub(val + 1));
    let test = n - train - val;
    (train, val, test)
}

/// Seeded shuffle followed by contiguous slicing.
pub fn split_dataset(
    records: &[ReviewRecord],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit> {
    if records.len() < 3 {
        return Err(Error::Usage(format!(
            "need at least 3 records to split, got {}",
            records.len()
        )));
    }
    let sum = ratios.0 + ratios.1 + ratios.2;
    if (sum - 1.0).abs() > 1e-9 || ratios.0 < 0.0 || ratios.1 < 0.0 || ratios.2 < 0.0 {
        return Err(Error::Usage(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (n_train, n_val, _) = split_sizes(records.len(), ratios);
    let take = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: take(&order[..n_train]),
        validation: take(&order[n_train..n_train + n_val]),
        test: take(&order[n_train + n_val..]),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(n: usize) -> Vec<ReviewRecord> {
        (0..n).map(|i| ReviewRecord::new(format!("r{i}"), format!("text {i}"))).collect()
    }

    #[test]
    fn ten_records_split_8_1_1() {
        let s = split_dataset(&recs(10), DEFAULT_RATIOS, 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = split_dataset(&recs(50), DEFAULT_RATIOS, 9).unwrap();
        let b = split_dataset(&recs(50), DEFAULT_RATIOS, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seeds_give_different_permutations() {
        let a = split_dataset(&recs(100), DEFAULT_RATIOS, 1).unwrap();
        let b = split_dataset(&recs(100), DEFAULT_RATIOS, 2).unwrap();
        assert_ne!(a.train, b.train);
    }

    #[test]
    fn partition_is_exact() {
        for n in 3..60 {
            let s = split_dataset(&recs(n), DEFAULT_RATIOS, n as u64).unwrap();
            let mut ids: Vec<String> = s
                .train
                .iter()
                .chain(&s.validation)
                .chain(&s.test)
                .map(|r| r.id.clone())
                .collect();
            ids.sort();
            let mut want: Vec<String> = recs(n).into_iter().map(|r| r.id).collect();
            want.sort();
            assert_eq!(ids, want);
            assert!(!s.validation.is_empty() && !s.test.is_empty());
            if n >= 10 {
                assert!((s.train.len() as f64 - 0.8 * n as f64).abs() <= 1.0);
                assert!((s.validation.len() as f64 - 0.1 * n as f64).abs() <= 1.0);
                assert!((s.test.len() as f64 - 0.1 * n as f64).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn rejects_tiny_and_bad_ratios() {
        assert!(split_dataset(&recs(2), DEFAULT_RATIOS, 0).is_err());
        assert!(split_dataset(&recs(10), (0.5, 0.1, 0.1), 0).is_err());
    }
}
