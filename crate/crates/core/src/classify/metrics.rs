use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{svm_predict, LabeledDataset, SvmModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    /// `TP / (TP + FP + FN)`: hits among every sample that carries or
    /// received this label.
    pub accuracy: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Number of samples whose true label is this class.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub labels: Vec<String>,
    /// `confusion[truth][predicted]`, indexed like `labels`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    /// Fraction of all samples predicted correctly.
    pub overall_accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_predictions<S: AsRef<str>>(truth: &[S], predicted: &[S]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::dims(truth.len(), predicted.len()));
        }
        if truth.is_empty() {
            return Err(Error::Dataset("empty test set".into()));
        }
        let labels: Vec<String> = truth
            .iter()
            .chain(predicted)
            .map(|s| s.as_ref().to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index = |s: &str| labels.binary_search_by(|l| l.as_str().cmp(s)).expect("label collected above");
        let mut confusion = vec![vec![0usize; labels.len()]; labels.len()];
        for (t, p) in truth.iter().zip(predicted) {
            confusion[index(t.as_ref())][index(p.as_ref())] += 1;
        }

        let per_class = labels
            .iter()
            .enumerate()
            .map(|(c, label)| {
                let tp = confusion[c][c];
                let support: usize = confusion[c].iter().sum();
                let predicted_as: usize = confusion.iter().map(|row| row[c]).sum();
                let (fp, fn_) = (predicted_as - tp, support - tp);
                ClassMetrics {
                    label: label.clone(),
                    precision: ratio(tp, tp + fp),
                    recall: ratio(tp, tp + fn_),
                    accuracy: ratio(tp, tp + fp + fn_),
                    true_positives: tp,
                    false_positives: fp,
                    false_negatives: fn_,
                    support,
                }
            })
            .collect();
        let correct: usize = (0..labels.len()).map(|c| confusion[c][c]).sum();
        Ok(Self { overall_accuracy: ratio(correct, truth.len()), labels, confusion, per_class })
    }

    pub fn class(&self, label: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|c| c.label == label)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// Predicts every test sample and tabulates the results.
pub fn evaluate(model: &SvmModel, test: &LabeledDataset) -> Result<Metrics> {
    let predicted = test
        .samples
        .iter()
        .map(|(x, _)| svm_predict(model, &x.0).map(|(label, _)| label))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<String> = test.samples.iter().map(|(_, l)| l.clone()).collect();
    Metrics::from_predictions(&truth, &predicted)
}
