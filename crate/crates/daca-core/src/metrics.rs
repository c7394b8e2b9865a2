//! Classification metrics over hard thresholded predictions.
//!
//! With P actual-fake records and N actual-true records: recall = TP / P
//! and F1 = 2 TP / (TP + FP + P). Undefined metrics raise instead of
//! silently returning 0.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts for the binary fake/true task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    /// Actual fake records.
    pub p: u64,
    /// Fake records predicted fake.
    pub tp: u64,
    /// True records predicted fake.
    pub fp: u64,
    /// Actual true records.
    pub n: u64,
}

/// Counts predictions against labels; a record is predicted fake iff its
/// probability is strictly above `threshold`.
pub fn confusion(predictions: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "confusion inputs".into(),
            expected: labels.len(),
            actual: predictions.len(),
        });
    }
    let mut counts = ConfusionCounts {
        p: 0,
        tp: 0,
        fp: 0,
        n: 0,
    };
    for (&prob, &label) in predictions.iter().zip(labels) {
        if label > 1 {
            return Err(Error::InvalidInput(format!(
                "labels must be 0 or 1, got {label}"
            )));
        }
        let predicted_fake = prob > threshold;
        if label == 1 {
            counts.p += 1;
            if predicted_fake {
                counts.tp += 1;
            }
        } else {
            counts.n += 1;
            if predicted_fake {
                counts.fp += 1;
            }
        }
    }
    Ok(counts)
}

pub fn recall(counts: &ConfusionCounts) -> Result<f64> {
    if counts.p == 0 {
        return Err(Error::UndefinedMetric("recall with P = 0".into()));
    }
    Ok(counts.tp as f64 / counts.p as f64)
}

pub fn f1(counts: &ConfusionCounts) -> Result<f64> {
    let denom = counts.tp + counts.fp + counts.p;
    if denom == 0 {
        return Err(Error::UndefinedMetric("f1 with TP + FP + P = 0".into()));
    }
    Ok(2.0 * counts.tp as f64 / denom as f64)
}

pub fn precision(counts: &ConfusionCounts) -> Result<f64> {
    let denom = counts.tp + counts.fp;
    if denom == 0 {
        return Err(Error::UndefinedMetric("precision with TP + FP = 0".into()));
    }
    Ok(counts.tp as f64 / denom as f64)
}

pub fn accuracy(counts: &ConfusionCounts) -> Result<f64> {
    let total = counts.p + counts.n;
    if total == 0 {
        return Err(Error::UndefinedMetric("accuracy with no records".into()));
    }
    let tn = counts.n - counts.fp;
    Ok((counts.tp + tn) as f64 / total as f64)
}

/// Metrics report rendered as structured text, one `name = value` line per
/// metric (6 decimal places) plus the raw counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub recall: f64,
    pub f1: f64,
    pub precision: Option<f64>,
    pub accuracy: f64,
}

impl MetricsReport {
    pub fn from_counts(counts: ConfusionCounts) -> Result<Self> {
        Ok(Self {
            counts,
            recall: recall(&counts)?,
            f1: f1(&counts)?,
            precision: precision(&counts).ok(),
            accuracy: accuracy(&counts)?,
        })
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "recall = {:.6}", self.recall)?;
        writeln!(f, "f1 = {:.6}", self.f1)?;
        match self.precision {
            Some(p) => writeln!(f, "precision = {p:.6}")?,
            None => writeln!(f, "precision = undefined")?,
        }
        writeln!(f, "accuracy = {:.6}", self.accuracy)?;
        writeln!(f, "actual_fake = {}", self.counts.p)?;
        writeln!(f, "actual_true = {}", self.counts.n)?;
        writeln!(f, "true_positives = {}", self.counts.tp)?;
        write!(f, "false_positives = {}", self.counts.fp)
    }
}
