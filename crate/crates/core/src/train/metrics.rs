use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classification metrics; `confusion[truth][predicted]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class_f1: Vec<f64>,
    pub weighted_f1: f64,
    pub confusion: Vec<Vec<usize>>,
    pub support: Vec<usize>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl MetricsReport {
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Result<Self> {
        let c = confusion.len();
        if c == 0 || confusion.iter().any(|row| row.len() != c) {
            return Err(Error::Validation(
                "confusion matrix must be square and nonempty".into(),
            ));
        }
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Validation("no records to evaluate".into()));
        }
        let support: Vec<usize> = confusion.iter().map(|row| row.iter().sum()).collect();
        let predicted: Vec<usize> = (0..c)
            .map(|j| confusion.iter().map(|row| row[j]).sum())
            .collect();
        let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
        let per_class_f1: Vec<f64> = (0..c)
            .map(|k| {
                let tp = confusion[k][k] as f64;
                let precision = ratio(tp, predicted[k] as f64);
                let recall = ratio(tp, support[k] as f64);
                ratio(2.0 * precision * recall, precision + recall)
            })
            .collect();
        let weighted_f1 = per_class_f1
            .iter()
            .zip(&support)
            .map(|(f, &s)| f * s as f64)
            .sum::<f64>()
            / total as f64;
        Ok(Self {
            accuracy: correct as f64 / total as f64,
            per_class_f1,
            weighted_f1,
            confusion,
            support,
        })
    }

    pub fn from_predictions(
        truth: &[usize],
        predicted: &[usize],
        num_classes: usize,
    ) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Dimension {
                op: "metrics",
                left: vec![truth.len()],
                right: vec![predicted.len()],
            });
        }
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            for index in [t, p] {
                if index >= num_classes {
                    return Err(Error::Index {
                        index,
                        len: num_classes,
                    });
                }
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn num_records(&self) -> usize {
        self.support.iter().sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let m = MetricsReport::from_predictions(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(m.confusion, vec![vec![1, 1], vec![0, 1]]);
        assert!((m.per_class_f1[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.per_class_f1[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.weighted_f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_scores_zero() {
        let m = MetricsReport::from_predictions(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(m.per_class_f1[2], 0.0);
        assert_eq!(m.support[2], 0);
        assert_eq!(m.weighted_f1, 1.0);
    }

    #[test]
    fn rejects_out_of_range_and_empty() {
        assert!(MetricsReport::from_predictions(&[0, 3], &[0, 1], 3).is_err());
        assert!(MetricsReport::from_predictions(&[], &[], 3).is_err());
        assert!(MetricsReport::from_predictions(&[0], &[0, 1], 3).is_err());
    }
}
