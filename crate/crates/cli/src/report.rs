//! Text tables and comma-separated records. Floats in CSV use the shortest
//! exact representation so files compare bit-for-bit across runs.

use std::fmt::Write;

use drifa_core::ClassificationMetrics;

pub fn metrics_csv(rows: &[(String, &ClassificationMetrics)]) -> String {
    let mut out = String::from("label,accuracy,precision,recall,f1\n");
    for (label, m) in rows {
        writeln!(out, "{label},{},{},{},{}", m.accuracy, m.precision, m.recall, m.f1).unwrap();
    }
    out
}

pub fn metrics_table(rows: &[(String, &ClassificationMetrics)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}  {:>8}  {:>9}  {:>8}  {:>8}\n", "label", "accuracy", "precision", "recall", "f1");
    for (label, m) in rows {
        writeln!(out, "{label:<width$}  {:>8.4}  {:>9.4}  {:>8.4}  {:>8.4}", m.accuracy, m.precision, m.recall, m.f1)
            .unwrap();
    }
    out
}

pub fn confusion_csv(per_task: &[&ClassificationMetrics]) -> String {
    let mut out = String::from("task,true,predicted,count\n");
    for (t, m) in per_task.iter().enumerate() {
        for (y, row) in m.confusion.iter().enumerate() {
            for (p, count) in row.iter().enumerate() {
                writeln!(out, "{t},{y},{p},{count}").unwrap();
            }
        }
    }
    out
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Binary greyscale image, one byte per pixel from values in [0, 1].
pub fn pgm(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}
