//! Confusion matrices, per-class scores, and run summaries.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[truth][predicted]`
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { counts: vec![vec![0; classes]; classes] }
    }

    pub fn from_pairs(classes: usize, truth: &[usize], predicted: &[usize]) -> Self {
        let mut m = ConfusionMatrix::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.add(t, p);
        }
        m
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.trace(), self.total())
    }

    pub fn true_count(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted_count(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    pub fn precision(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.predicted_count(class))
    }

    pub fn recall(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.true_count(class))
    }

    pub fn f1(&self, class: usize) -> f64 {
        let (p, r) = (self.precision(class), self.recall(class));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// `a / b`, with `0 / 0 = 0`.
fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    pub history: Vec<EpochRecord>,
    pub peak_accuracy: f64,
    /// 1-based epoch of the peak, 0 when no training history exists.
    pub best_epoch: usize,
}

impl MetricsReport {
    pub fn from_confusion(class_names: Vec<String>, confusion: ConfusionMatrix) -> Self {
        let per_class = class_names
            .iter()
            .enumerate()
            .map(|(k, name)| ClassMetrics {
                class: name.clone(),
                support: confusion.true_count(k),
                precision: confusion.precision(k),
                recall: confusion.recall(k),
                f1: confusion.f1(k),
            })
            .collect();
        let accuracy = confusion.accuracy();
        MetricsReport {
            class_names,
            accuracy,
            per_class,
            confusion,
            history: Vec::new(),
            peak_accuracy: accuracy,
            best_epoch: 0,
        }
    }

    pub fn f1_of(&self, class: &str) -> Option<f64> {
        self.per_class.iter().find(|c| c.class == class).map(|c| c.f1)
    }

    /// First epoch whose validation accuracy reaches `fraction` of the final one.
    pub fn epochs_to_fraction_of_final(&self, fraction: f64) -> Option<usize> {
        let last = self.history.last()?.val_accuracy;
        self.history.iter().find(|e| e.val_accuracy >= fraction * last).map(|e| e.epoch)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.history.last().map(|e| e.val_accuracy)
    }
}

/// Summary of peak accuracies over repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub values: Vec<f64>,
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl DistributionReport {
    pub fn from_values(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "distribution of zero values");
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let quantile = |q: f64| {
            let pos = q * (sorted.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        };
        DistributionReport {
            max: *sorted.last().unwrap(),
            min: sorted[0],
            mean,
            std,
            q1: quantile(0.25),
            median: quantile(0.5),
            q3: quantile(0.75),
            values,
        }
    }
}
