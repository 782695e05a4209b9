//! Stratified train/validation/test split: per class, 20% goes to test and
//! 20% of the remainder to validation (so the three parts are 64/16/20).
//! Deterministic under the seed; partitions are disjoint and exhaustive.

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub warnings: Vec<String>,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Split sample indices by their labels. Classes with fewer than 5 members
/// are stratified best-effort with a warning.
pub fn split_dataset(labels: &[usize], seed: u64) -> Result<Splits> {
    if labels.is_empty() {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    let classes = 1 + labels.iter().copied().max().unwrap_or(0);
    let mut warnings = Vec::new();
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for class in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < 5 {
            warnings.push(format!(
                "class {class} has only {} samples; stratification is best-effort",
                members.len()
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37 * class as u64));
        members.shuffle(&mut rng);
        let n = members.len();
        let n_test = round_half_up(n as f64 * 0.2).min(n);
        let n_val = round_half_up((n - n_test) as f64 * 0.2).min(n - n_test);
        test.extend_from_slice(&members[..n_test]);
        val.extend_from_slice(&members[n_test..n_test + n_val]);
        train.extend_from_slice(&members[n_test + n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Splits {
        train,
        val,
        test,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn labels_with_counts(counts: &[usize]) -> Vec<usize> {
        let mut labels = Vec::new();
        for (class, &n) in counts.iter().enumerate() {
            labels.extend(std::iter::repeat(class).take(n));
        }
        labels
    }

    #[test]
    fn benchmark_class_counts_reproduce_published_sizes() {
        // class counts (Chickenpox, Cowpox, Measles, Monkeypox, Normal)
        let labels = labels_with_counts(&[2100, 1850, 1540, 7950, 3190]);
        let s = split_dataset(&labels, 42).unwrap();
        assert_eq!(labels.len(), 16630);
        let tol = 5; // ±1 per class
        assert!((s.test.len() as i64 - 3326).unsigned_abs() as usize <= tol, "test {}", s.test.len());
        assert!((s.val.len() as i64 - 2661).unsigned_abs() as usize <= tol, "val {}", s.val.len());
        assert!((s.train.len() as i64 - 10643).unsigned_abs() as usize <= tol, "train {}", s.train.len());
    }

    #[test]
    fn per_class_test_fraction_within_one_sample() {
        let counts = [2100usize, 1850, 1540, 7950, 3190];
        let labels = labels_with_counts(&counts);
        let s = split_dataset(&labels, 3).unwrap();
        for (class, &n) in counts.iter().enumerate() {
            let in_test = s.test.iter().filter(|&&i| labels[i] == class).count();
            let want = n as f64 * 0.2;
            assert!(
                (in_test as f64 - want).abs() <= 1.0,
                "class {class}: {in_test} vs {want}"
            );
        }
    }

    #[test]
    fn deterministic_disjoint_exhaustive() {
        let labels = labels_with_counts(&[50, 30, 20]);
        let a = split_dataset(&labels, 7).unwrap();
        let b = split_dataset(&labels, 7).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.test, b.test);

        let mut all: Vec<usize> = a
            .train
            .iter()
            .chain(a.val.iter())
            .chain(a.test.iter())
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        let set: HashSet<usize> = all.into_iter().collect();
        assert_eq!(set.len(), labels.len());
    }

    #[test]
    fn tiny_class_warns() {
        let labels = labels_with_counts(&[40, 3]);
        let s = split_dataset(&labels, 1).unwrap();
        assert!(!s.warnings.is_empty());
    }
}
