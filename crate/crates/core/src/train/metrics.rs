use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary classification scores with the fake class (label 1) as positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `confusion[label][prediction]`.
    pub confusion: [[u64; 2]; 2],
}

/// Precision, recall and F1 treating one class as positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

impl Metrics {
    pub fn from_confusion(confusion: [[u64; 2]; 2]) -> Self {
        let total: u64 = confusion.iter().flatten().sum();
        let fake = Self::scores_for(&confusion, 1);
        Self {
            accuracy: ratio(confusion[0][0] + confusion[1][1], total),
            precision: fake.precision,
            recall: fake.recall,
            f1: fake.f1,
            confusion,
        }
    }

    fn scores_for(confusion: &[[u64; 2]; 2], class: usize) -> ClassScores {
        let other = 1 - class;
        let tp = confusion[class][class];
        let fp = confusion[other][class];
        let fn_ = confusion[class][other];
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        ClassScores {
            class,
            precision,
            recall,
            f1: harmonic(precision, recall),
            support: tp + fn_,
        }
    }

    /// Scores with each class in turn as the positive one.
    pub fn per_class(&self) -> [ClassScores; 2] {
        [Self::scores_for(&self.confusion, 0), Self::scores_for(&self.confusion, 1)]
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

pub fn compute_metrics(predictions: &[usize], labels: &[usize]) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Contract("metrics need at least one prediction".into()));
    }
    let mut confusion = [[0u64; 2]; 2];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p > 1 || y > 1 {
            return Err(Error::Contract(format!("non-binary class pair ({y}, {p})")));
        }
        confusion[y][p] += 1;
    }
    Ok(Metrics::from_confusion(confusion))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_classifier() {
        let m = compute_metrics(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_confusion_matrix() {
        let m = compute_metrics(&[1, 0, 1, 0], &[1, 1, 0, 0]).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (0.5, 0.5, 0.5, 0.5));
        assert_eq!(m.confusion, [[1, 1], [1, 1]]);
    }

    #[test]
    fn degenerate_denominators() {
        let m = compute_metrics(&[0, 0, 0], &[1, 0, 1]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        let real = m.per_class()[0];
        assert_eq!(real.precision, 1.0 / 3.0);
        assert_eq!(real.recall, 1.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(compute_metrics(&[0], &[0, 1]), Err(Error::Contract(_))));
    }

    proptest! {
        #[test]
        fn permutation_invariant_and_consistent(pairs in prop::collection::vec((0usize..2, 0usize..2), 1..200), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let (p, y): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let a = compute_metrics(&p, &y).unwrap();
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (p2, y2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            prop_assert_eq!(&a, &compute_metrics(&p2, &y2).unwrap());
            let c = a.confusion;
            prop_assert_eq!(a.accuracy, (c[0][0] + c[1][1]) as f64 / a.total() as f64);
        }
    }
}
