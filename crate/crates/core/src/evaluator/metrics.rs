use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::Label;

/// Confusion counts and derived scores, with attack as the positive class.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub scenario: String,
    pub method: String,
    pub runtime_ms: f64,
    /// Free-form echo of the configuration that produced the numbers.
    pub config: String,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            tp,
            fp,
            tn,
            fn_,
            accuracy: ratio(tp + tn, tp + tn + fp + fn_),
            precision,
            recall,
            f1,
            ..Self::default()
        }
    }

    pub fn labeled(mut self, scenario: impl Into<String>, method: impl Into<String>) -> Self {
        self.scenario = scenario.into();
        self.method = method.into();
        self
    }
}

/// `verdicts[i]` is true when flow `i` was flagged as an attack.
pub fn compute_metrics(verdicts: &[bool], labels: &[Label]) -> Result<MetricsReport> {
    if verdicts.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: verdicts.len(),
            right: labels.len(),
        });
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&v, l) in verdicts.iter().zip(labels) {
        match (v, l.is_attack()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(MetricsReport::from_counts(tp, fp, tn, fn_))
}
