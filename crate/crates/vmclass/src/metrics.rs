//! Binary classification metrics: confusion matrix, accuracy and per-class
//! precision/recall.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    /// Precision or recall had an empty denominator and was reported as 0.
    pub zero_denominator: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    /// `confusion[actual][predicted]`.
    pub confusion: [[usize; 2]; 2],
    pub accuracy: f64,
    /// Indexed by class label (0 delay-insensitive, 1 interactive).
    pub per_class: [ClassMetrics; 2],
    pub n: usize,
    /// Any per-class metric hit a zero denominator.
    pub zero_denominator_flag: bool,
}

/// Compare predictions against labels. Both slices hold class indices
/// (0 or 1) and must have the same non-zero length.
pub fn compute_metrics(predictions: &[u8], labels: &[u8]) -> Result<EvalMetrics> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "compute_metrics",
            expected: format!("{} predictions", labels.len()),
            got: format!("{}", predictions.len()),
        });
    }
    if labels.is_empty() {
        return Err(Error::TooFewRows { needed: 1, got: 0 });
    }

    let mut confusion = [[0usize; 2]; 2];
    for (&pred, &actual) in predictions.iter().zip(labels) {
        if pred > 1 || actual > 1 {
            return Err(Error::MalformedDataset(format!(
                "class values must be 0 or 1 (prediction {pred}, label {actual})"
            )));
        }
        confusion[actual as usize][pred as usize] += 1;
    }

    let n = labels.len();
    let accuracy = (confusion[0][0] + confusion[1][1]) as f64 / n as f64;

    let mut per_class = [ClassMetrics::default(); 2];
    let mut flag = false;
    for c in 0..2 {
        let tp = confusion[c][c];
        let predicted = confusion[0][c] + confusion[1][c];
        let actual = confusion[c][0] + confusion[c][1];
        let mut m = ClassMetrics::default();
        if predicted == 0 {
            m.zero_denominator = true;
        } else {
            m.precision = tp as f64 / predicted as f64;
        }
        if actual == 0 {
            m.zero_denominator = true;
        } else {
            m.recall = tp as f64 / actual as f64;
        }
        flag |= m.zero_denominator;
        per_class[c] = m;
    }

    Ok(EvalMetrics {
        confusion,
        accuracy,
        per_class,
        n,
        zero_denominator_flag: flag,
    })
}
