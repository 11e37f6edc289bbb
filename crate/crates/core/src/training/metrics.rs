use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ImageExamples, Result, TrainingError};
use crate::rbf::RbfModel;
use crate::store::EmbeddingStore;

/// Image-level classification metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub images: usize,
    pub accuracy: f64,
    /// `None` for classes absent from the split.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
}

impl Metrics {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.is_empty() {
            return Err(TrainingError::EmptySplit { split: "evaluation" });
        }
        if truth.len() != predicted.len() {
            return Err(TrainingError::ShapeMismatch(format!(
                "{} labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        if let Some(bad) = truth.iter().chain(predicted).find(|&&c| c >= classes) {
            return Err(TrainingError::InvalidArgument(format!("class index {bad} out of range for {classes} classes")));
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[t][p] += 1;
        }
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect();
        Ok(Self {
            images: truth.len(),
            accuracy: correct as f64 / truth.len() as f64,
            per_class_accuracy,
            confusion,
        })
    }

    /// Plain-text table for terminal output.
    pub fn to_table(&self, classes: &[String]) -> String {
        let width = classes.iter().map(String::len).max().unwrap_or(5).max(9);
        let mut s = String::new();
        let _ = writeln!(s, "accuracy: {:.4} ({} images)", self.accuracy, self.images);
        let _ = write!(s, "{:width$}", "true\\pred");
        for c in classes {
            let _ = write!(s, " {c:>width$}");
        }
        let _ = writeln!(s, " {:>width$}", "acc");
        for (c, row) in self.confusion.iter().enumerate() {
            let _ = write!(s, "{:width$}", classes.get(c).map_or("?", String::as_str));
            for n in row {
                let _ = write!(s, " {n:>width$}");
            }
            match self.per_class_accuracy[c] {
                Some(a) => {
                    let _ = writeln!(s, " {a:>width$.4}");
                }
                None => {
                    let _ = writeln!(s, " {:>width$}", "-");
                }
            }
        }
        s
    }
}

/// Image-level accuracy of `model` over `images` via `predict_image`.
pub fn evaluate(model: &RbfModel, store: &EmbeddingStore, images: &[ImageExamples]) -> Result<Metrics> {
    if images.is_empty() {
        return Err(TrainingError::EmptySplit { split: "evaluation" });
    }
    let mut truth = Vec::with_capacity(images.len());
    let mut predicted = Vec::with_capacity(images.len());
    for img in images {
        let segments: Vec<Vec<f64>> = img.rows.iter().map(|&r| store.row_f64(r)).collect();
        predicted.push(model.predict_image(&segments)?.predicted_class);
        truth.push(img.class_index);
    }
    Metrics::from_predictions(&truth, &predicted, model.classes().len())
}
