//! Confusion-matrix metrics with JSON and CSV renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub split_fingerprint: String,
    pub classes: Vec<String>,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub n: usize,
    pub accuracy: f64,
    /// Binary: `FP / (FP + TN)` with "fake" positive. Multi-class: one-vs-rest macro average.
    pub fpr: f64,
    /// Binary: `FN / (FN + TP)`. Multi-class: one-vs-rest macro average.
    pub fnr: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `(FPR, FNR)` of class `k` against the rest.
fn one_vs_rest(confusion: &[Vec<usize>], k: usize) -> (f64, f64) {
    let n = confusion.len();
    let tp = confusion[k][k];
    let fn_ = (0..n)
        .filter(|&p| p != k)
        .map(|p| confusion[k][p])
        .sum::<usize>();
    let fp = (0..n)
        .filter(|&t| t != k)
        .map(|t| confusion[t][k])
        .sum::<usize>();
    let total: usize = confusion.iter().flatten().sum();
    let tn = total - tp - fn_ - fp;
    (ratio(fp, fp + tn), ratio(fn_, fn_ + tp))
}

impl EvalReport {
    pub fn from_confusion(
        scenario: impl Into<String>,
        split_fingerprint: impl Into<String>,
        classes: Vec<String>,
        confusion: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let k = classes.len();
        if k < 2 || confusion.len() != k || confusion.iter().any(|r| r.len() != k) {
            return Err(Error::invalid(format!(
                "confusion matrix must be {k}x{k} with k >= 2"
            )));
        }
        let n: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
        let (fpr, fnr) = if k == 2 {
            one_vs_rest(&confusion, 1)
        } else {
            let all: Vec<(f64, f64)> = (0..k).map(|c| one_vs_rest(&confusion, c)).collect();
            (
                all.iter().map(|r| r.0).sum::<f64>() / k as f64,
                all.iter().map(|r| r.1).sum::<f64>() / k as f64,
            )
        };
        Ok(EvalReport {
            scenario: scenario.into(),
            split_fingerprint: split_fingerprint.into(),
            classes,
            confusion,
            n,
            accuracy: ratio(correct, n),
            fpr,
            fnr,
        })
    }

    /// Recomputes every metric from the confusion matrix and compares exactly.
    pub fn is_consistent(&self) -> bool {
        EvalReport::from_confusion(
            self.scenario.clone(),
            self.split_fingerprint.clone(),
            self.classes.clone(),
            self.confusion.clone(),
        )
        .is_ok_and(|r| &r == self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Metric rows followed by the confusion matrix, one `truth,predicted,count` row per cell.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("key,value\n");
        let _ = writeln!(s, "scenario,{}", self.scenario);
        let _ = writeln!(s, "split_fingerprint,{}", self.split_fingerprint);
        let _ = writeln!(s, "n,{}", self.n);
        let _ = writeln!(s, "accuracy,{}", self.accuracy);
        let _ = writeln!(s, "fpr,{}", self.fpr);
        let _ = writeln!(s, "fnr,{}", self.fnr);
        s.push_str("truth,predicted,count\n");
        for (t, row) in self.confusion.iter().enumerate() {
            for (p, c) in row.iter().enumerate() {
                let _ = writeln!(s, "{},{},{c}", self.classes[t], self.classes[p]);
            }
        }
        s
    }
}
