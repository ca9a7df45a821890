//! Confusion-matrix classification metrics.
//!
//! Per class: sensitivity = TP/(TP+FN), precision = TP/(TP+FP),
//! F1 = 2*precision*sensitivity/(precision+sensitivity). The reported
//! accuracy is the correct fraction; sensitivity/precision/F1 are
//! macro-averaged over classes (classes are balanced by construction).
//! Empty denominators yield 0.

use ndarray::Array2;
use serde::Serialize;

/// `counts[true_class][predicted_class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub counts: Array2<u64>,
}

pub fn confusion_matrix(
    n_classes: usize,
    pairs: impl Iterator<Item = (usize, usize)>,
) -> ConfusionMatrix {
    let mut counts = Array2::<u64>::zeros((n_classes, n_classes));
    for (truth, pred) in pairs {
        counts[[truth, pred]] += 1;
    }
    ConfusionMatrix { counts }
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.nrows()
    }

    pub fn total(&self) -> u64 {
        self.counts.sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[[c, c]]
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        self.counts.row(c).sum() - self.counts[[c, c]]
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        self.counts.column(c).sum() - self.counts[[c, c]]
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let correct: u64 = (0..self.n_classes()).map(|c| self.true_positives(c)).sum();
        correct as f64 / total as f64
    }

    pub fn sensitivity(&self, c: usize) -> f64 {
        ratio(self.true_positives(c), self.true_positives(c) + self.false_negatives(c))
    }

    pub fn precision(&self, c: usize) -> f64 {
        ratio(self.true_positives(c), self.true_positives(c) + self.false_positives(c))
    }

    pub fn f1(&self, c: usize) -> f64 {
        let p = self.precision(c);
        let s = self.sensitivity(c);
        if p + s == 0.0 {
            0.0
        } else {
            2.0 * p * s / (p + s)
        }
    }
}

fn ratio(num: u64, denom: u64) -> f64 {
    if denom == 0 {
        0.0
    } else {
        num as f64 / denom as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_sensitivity: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
    #[serde(skip)]
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        let k = confusion.n_classes() as f64;
        let macro_sensitivity =
            (0..confusion.n_classes()).map(|c| confusion.sensitivity(c)).sum::<f64>() / k;
        let macro_precision =
            (0..confusion.n_classes()).map(|c| confusion.precision(c)).sum::<f64>() / k;
        let macro_f1 = (0..confusion.n_classes()).map(|c| confusion.f1(c)).sum::<f64>() / k;
        MetricsReport {
            accuracy: confusion.accuracy(),
            macro_sensitivity,
            macro_precision,
            macro_f1,
            confusion,
        }
    }
}
