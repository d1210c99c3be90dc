//! Confusion matrix and support-weighted accuracy / precision / recall / F1.

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, NUM_CLASSES};
use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes, both in
/// [`ClassLabel::index`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn add(&mut self, truth: ClassLabel, predicted: ClassLabel) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    /// One-vs-rest counts for `class`.
    pub fn one_vs_rest(&self, class: ClassLabel) -> BinaryCounts {
        let c = class.index();
        let tp = self.counts[c][c];
        let fn_ = self.counts[c].iter().sum::<u64>() - tp;
        let fp = (0..NUM_CLASSES).map(|r| self.counts[r][c]).sum::<u64>() - tp;
        let tn = self.total() - tp - fn_ - fp;
        BinaryCounts { tp, fp, fn_, tn }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl BinaryCounts {
    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: ClassLabel,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn confusion(truth: &[ClassLabel], predicted: &[ClassLabel]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::invalid(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Empty("label sequence"));
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in truth.iter().zip(predicted) {
        cm.add(t, p);
    }
    Ok(cm)
}

/// Same as [`confusion`] for raw class codes 1..=3.
pub fn confusion_from_codes(truth: &[u8], predicted: &[u8]) -> Result<ConfusionMatrix> {
    let decode = |codes: &[u8]| -> Result<Vec<ClassLabel>> {
        codes
            .iter()
            .map(|&c| ClassLabel::from_code(c).ok_or_else(|| Error::invalid(format!("label {c} outside 1..=3"))))
            .collect()
    };
    confusion(&decode(truth)?, &decode(predicted)?)
}

pub fn per_class(cm: &ConfusionMatrix) -> [ClassMetrics; NUM_CLASSES] {
    ClassLabel::ALL.map(|label| {
        let b = cm.one_vs_rest(label);
        ClassMetrics {
            label,
            support: b.tp + b.fn_,
            precision: b.precision(),
            recall: b.recall(),
            f1: b.f1(),
        }
    })
}

/// Accuracy is `trace / total`; precision, recall and F1 are per-class
/// one-vs-rest values averaged with true-class support as weights.
pub fn report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Empty("confusion matrix"));
    }
    let n = total as f64;
    let mut out = MetricsReport {
        accuracy: cm.trace() as f64 / n,
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
    for m in per_class(cm) {
        let w = m.support as f64 / n;
        out.precision += w * m.precision;
        out.f1 += w * m.f1;
    }
    // support-weighted recall telescopes to trace / total; the closed form
    // keeps it bitwise equal to accuracy
    out.recall = out.accuracy;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ClassLabel::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let labels = [Malicious, NonMalicious, Unknown, NonMalicious];
        let cm = confusion(&labels, &labels).unwrap();
        assert_eq!(cm.counts, [[1, 0, 0], [0, 2, 0], [0, 0, 1]]);
        let r = report(&cm).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn single_predicted_class_fills_one_column() {
        let truth = [Malicious, NonMalicious, Unknown, Unknown];
        let cm = confusion(&truth, &[Malicious; 4]).unwrap();
        assert_eq!(cm.counts, [[1, 0, 0], [1, 0, 0], [2, 0, 0]]);
        // classes never predicted have zero precision and F1
        let pc = per_class(&cm);
        assert_eq!(pc[1].f1, 0.0);
        assert_eq!(pc[2].precision, 0.0);
    }

    #[test]
    fn binary_folded_case() {
        // TP=50 FN=5 for the malicious class, FP=5 TN=40
        let cm = ConfusionMatrix {
            counts: [[50, 5, 0], [5, 40, 0], [0, 0, 0]],
        };
        let b = cm.one_vs_rest(Malicious);
        assert_eq!(b, BinaryCounts { tp: 50, fp: 5, fn_: 5, tn: 40 });
        assert!((b.accuracy() - 0.90).abs() < 1e-12);
        assert!((b.precision() - 0.9091).abs() < 5e-5);
        assert!((b.recall() - 0.9091).abs() < 5e-5);
        assert!((b.f1() - 0.9091).abs() < 5e-5);

        let r = report(&cm).unwrap();
        assert!((r.accuracy - 0.90).abs() < 1e-12);
        // support weighting: (55 * 50/55 + 45 * 40/45) / 100
        assert!((r.recall - 0.90).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(confusion(&[Malicious], &[]).is_err());
        assert!(confusion(&[], &[]).is_err());
        assert!(confusion_from_codes(&[1, 4], &[1, 1]).is_err());
        assert!(report(&ConfusionMatrix::default()).is_err());
    }
}
