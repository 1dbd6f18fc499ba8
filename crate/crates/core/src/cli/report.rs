//! Evaluation report: per-class rates, confusion matrix, per-layer rates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    /// Test images per class.
    pub test_counts: Vec<usize>,
    /// Fraction of each class's test images predicted correctly.
    pub class_rates: Vec<f64>,
    /// Arithmetic mean of `class_rates`.
    pub mean_rate: f64,
    /// `confusion[true][predicted]` image counts with the top layer.
    pub confusion: Vec<Vec<usize>>,
    /// Mean class rate when predicting with each layer's classifiers.
    pub layer_mean_rates: Vec<f64>,
    /// Wall-clock seconds per phase; not deterministic.
    pub timings: BTreeMap<String, f64>,
}

fn confusion(k: usize, truth: &[usize], predicted: &[usize]) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; k]; k];
    for (&t, &p) in truth.iter().zip(predicted) {
        m[t][p] += 1;
    }
    m
}

fn class_rates(m: &[Vec<usize>]) -> Vec<f64> {
    m.iter()
        .enumerate()
        .map(|(c, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                0.0
            } else {
                row[c] as f64 / total as f64
            }
        })
        .collect()
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

impl EvalReport {
    /// `layer_predictions[l][i]` is the class predicted for test image `i`
    /// by layer `l + 1`; the last layer is the model's prediction.
    pub fn new(
        class_names: Vec<String>,
        truth: &[usize],
        layer_predictions: &[Vec<usize>],
        timings: BTreeMap<String, f64>,
    ) -> Self {
        let k = class_names.len();
        let layer_mean_rates = layer_predictions
            .iter()
            .map(|p| mean(&class_rates(&confusion(k, truth, p))))
            .collect();
        let top = layer_predictions.last().map(Vec::as_slice).unwrap_or(&[]);
        let confusion = confusion(k, truth, top);
        let class_rates = class_rates(&confusion);
        Self {
            test_counts: confusion.iter().map(|r| r.iter().sum()).collect(),
            mean_rate: mean(&class_rates),
            class_rates,
            confusion,
            layer_mean_rates,
            class_names,
            timings,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable table.
    pub fn render(&self) -> String {
        let width = self
            .class_names
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max("class".len());
        let mut out = String::new();
        writeln!(
            out,
            "{:<width$}  {:>6}  {:>7}  {:>7}",
            "class", "tests", "correct", "rate"
        )
        .unwrap();
        for (c, name) in self.class_names.iter().enumerate() {
            writeln!(
                out,
                "{name:<width$}  {:>6}  {:>7}  {:>6.2}%",
                self.test_counts[c],
                self.confusion[c][c],
                100.0 * self.class_rates[c]
            )
            .unwrap();
        }
        writeln!(out, "mean class rate: {:.2}%", 100.0 * self.mean_rate).unwrap();
        for (l, rate) in self.layer_mean_rates.iter().enumerate() {
            writeln!(out, "  layer {}: {:.2}%", l + 1, 100.0 * rate).unwrap();
        }
        writeln!(out, "confusion (rows: true class, columns: predicted):").unwrap();
        for (c, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>5}")).collect();
            writeln!(out, "{:<width$} {}", self.class_names[c], cells.join("")).unwrap();
        }
        for (phase, secs) in &self.timings {
            writeln!(out, "{phase}: {secs:.2}s").unwrap();
        }
        out
    }
}
