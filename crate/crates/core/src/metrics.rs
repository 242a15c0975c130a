//! Classification metrics with macro averaging.

use serde::Serialize;

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy plus macro precision, recall and F1.
///
/// Per-class F1 is the harmonic mean of that class's precision and recall;
/// the macro average runs over classes that occur in either the labels or the
/// predictions. Zero denominators count as 0.
pub fn classification_metrics(predicted: &[usize], truth: &[usize], classes: usize) -> Result<ClassificationMetrics> {
    if predicted.len() != truth.len() {
        return Err(CoreError::LengthMismatch(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(CoreError::InvalidTaskOrClass { task: 0, class: p.max(t) });
        }
        confusion[t][p] += 1;
    }
    let correct: usize = (0..classes).map(|k| confusion[k][k]).sum();
    let (mut precision, mut recall, mut f1, mut present) = (0.0, 0.0, 0.0, 0usize);
    for k in 0..classes {
        let support: usize = confusion[k].iter().sum();
        let predicted_k: usize = confusion.iter().map(|row| row[k]).sum();
        if support == 0 && predicted_k == 0 {
            continue;
        }
        present += 1;
        let p = ratio(confusion[k][k], predicted_k);
        let r = ratio(confusion[k][k], support);
        precision += p;
        recall += r;
        if p + r > 0.0 {
            f1 += 2.0 * p * r / (p + r);
        }
    }
    let macro_avg = |v: f64| if present == 0 { 0.0 } else { v / present as f64 };
    Ok(ClassificationMetrics {
        accuracy: ratio(correct, truth.len()),
        precision: macro_avg(precision),
        recall: macro_avg(recall),
        f1: macro_avg(f1),
        confusion,
    })
}
