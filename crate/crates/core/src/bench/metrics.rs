//! The accuracy matrix and the evaluation metrics computed from it.

use crate::error::{Error, Result};
use serde::Serialize;

/// `T x T` matrix of accuracies: entry `(t, i)` is the accuracy on task i's
/// test set evaluated after training task t. The lower triangle covers seen
/// tasks; the strict upper triangle covers tasks not yet trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyMatrix {
    size: usize,
    values: Vec<Option<f64>>,
}

impl AccuracyMatrix {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::contract("accuracy matrix needs at least one task"));
        }
        Ok(AccuracyMatrix {
            size,
            values: vec![None; size * size],
        })
    }

    /// Build a fully populated matrix from rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        let mut m = AccuracyMatrix::new(size)?;
        for (t, row) in rows.iter().enumerate() {
            if row.len() != size {
                return Err(Error::contract(format!(
                    "row {t} has {} entries, expected {size}",
                    row.len()
                )));
            }
            for (i, &v) in row.iter().enumerate() {
                m.set(t, i, v)?;
            }
        }
        Ok(m)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn set(&mut self, after_task: usize, on_task: usize, accuracy: f64) -> Result<()> {
        if after_task >= self.size || on_task >= self.size {
            return Err(Error::contract(format!(
                "index ({after_task}, {on_task}) outside {0}x{0} matrix",
                self.size
            )));
        }
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::Domain(format!(
                "accuracy {accuracy} outside [0, 1]"
            )));
        }
        self.values[after_task * self.size + on_task] = Some(accuracy);
        Ok(())
    }

    pub fn get(&self, after_task: usize, on_task: usize) -> Option<f64> {
        self.values[after_task * self.size + on_task]
    }

    fn require(&self, after_task: usize, on_task: usize) -> Result<f64> {
        self.get(after_task, on_task).ok_or_else(|| {
            Error::contract(format!(
                "accuracy matrix entry ({after_task}, {on_task}) not populated"
            ))
        })
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(|v| v.is_some())
    }

    /// CSV with an `after_task` index column and one column per task.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("after_task");
        for i in 0..self.size {
            out.push_str(&format!(",task_{i}"));
        }
        out.push('\n');
        for t in 0..self.size {
            out.push_str(&t.to_string());
            for i in 0..self.size {
                match self.get(t, i) {
                    Some(v) => out.push_str(&format!(",{v}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Final average accuracy: the mean of the last row.
pub fn faa(matrix: &AccuracyMatrix) -> Result<f64> {
    let t = matrix.size();
    let mut sum = 0.0;
    for i in 0..t {
        sum += matrix.require(t - 1, i)?;
    }
    Ok(sum / t as f64)
}

/// Cumulative average accuracy on not-yet-seen tasks: after each checkpoint
/// t < T, average the accuracies on tasks t+1..T, then average over
/// checkpoints. Undefined for a single task.
pub fn ci_transfer(matrix: &AccuracyMatrix) -> Result<f64> {
    let t = matrix.size();
    if t < 2 {
        return Err(Error::UndefinedMetric(
            "ci_transfer needs at least two tasks".into(),
        ));
    }
    let mut outer = 0.0;
    for checkpoint in 0..t - 1 {
        let mut inner = 0.0;
        for future in checkpoint + 1..t {
            inner += matrix.require(checkpoint, future)?;
        }
        outer += inner / (t - 1 - checkpoint) as f64;
    }
    Ok(outer / (t - 1) as f64)
}

/// The three task-incremental metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MtilMetrics {
    pub transfer: f64,
    pub avg: f64,
    pub last: f64,
}

/// Transfer / Avg / Last over a full matrix.
///
/// Transfer averages, for each task i >= 2 (1-indexed), its accuracy over
/// the checkpoints before exposure, divided by i-1. The literature's printed
/// formula sums through checkpoint i itself while keeping the i-1 divisor;
/// `transfer_inclusive` reproduces that bound, the default stops at the last
/// pre-exposure checkpoint as the metric's prose description implies.
pub fn mtil_metrics(matrix: &AccuracyMatrix, transfer_inclusive: bool) -> Result<MtilMetrics> {
    let t = matrix.size();
    if t < 2 {
        return Err(Error::UndefinedMetric(
            "transfer needs at least two tasks".into(),
        ));
    }
    let mut transfer = 0.0;
    for task in 1..t {
        let upto = if transfer_inclusive { task + 1 } else { task };
        let mut tr = 0.0;
        for checkpoint in 0..upto {
            tr += matrix.require(checkpoint, task)?;
        }
        transfer += tr / task as f64;
    }
    transfer /= (t - 1) as f64;

    let mut avg = 0.0;
    for checkpoint in 0..t {
        for task in 0..t {
            avg += matrix.require(checkpoint, task)?;
        }
    }
    avg /= (t * t) as f64;

    Ok(MtilMetrics {
        transfer,
        avg,
        last: faa(matrix)?,
    })
}

/// Metrics of one pipeline run plus its frozen zero-shot baseline.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub protocol: String,
    pub num_tasks: usize,
    pub faa: f64,
    pub ci_transfer: Option<f64>,
    pub mtil: Option<MtilMetrics>,
    pub per_task_last: Vec<f64>,
    pub zero_shot: BaselineMetrics,
    pub config_hash: String,
    pub master_seed: u64,
}

/// The same metrics computed from the frozen zero-shot prototypes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BaselineMetrics {
    pub faa: f64,
    pub ci_transfer: Option<f64>,
    pub mtil: Option<MtilMetrics>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hand_matrix() -> AccuracyMatrix {
        AccuracyMatrix::from_rows(&[
            vec![0.9, 0.4, 0.3],
            vec![0.8, 0.7, 0.5],
            vec![0.7, 0.6, 0.8],
        ])
        .unwrap()
    }

    #[test]
    fn faa_examples() {
        let ones = AccuracyMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(faa(&ones).unwrap(), 1.0);

        let half = AccuracyMatrix::from_rows(&[vec![0.2, 0.2], vec![1.0, 0.0]]).unwrap();
        assert_eq!(faa(&half).unwrap(), 0.5);

        // Hand-computed 3x3: (0.7 + 0.6 + 0.8) / 3.
        assert_relative_eq!(faa(&hand_matrix()).unwrap(), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn faa_requires_full_last_row() {
        let mut m = AccuracyMatrix::new(2).unwrap();
        m.set(1, 0, 0.5).unwrap();
        assert!(faa(&m).is_err());
    }

    #[test]
    fn ci_transfer_examples() {
        let ones = AccuracyMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(ci_transfer(&ones).unwrap(), 1.0);

        // T = 2 with a single future entry.
        let m = AccuracyMatrix::from_rows(&[vec![0.9, 0.6], vec![0.8, 0.7]]).unwrap();
        assert_relative_eq!(ci_transfer(&m).unwrap(), 0.6, epsilon = 1e-15);

        // Hand-computed 3x3: ((0.4 + 0.3)/2 + 0.5) / 2 = 0.425.
        assert_relative_eq!(ci_transfer(&hand_matrix()).unwrap(), 0.425, epsilon = 1e-15);

        let single = AccuracyMatrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(
            ci_transfer(&single),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn mtil_examples() {
        let ones = AccuracyMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let m = mtil_metrics(&ones, false).unwrap();
        assert_eq!((m.transfer, m.avg, m.last), (1.0, 1.0, 1.0));

        // [[a, b], [c, d]]: Transfer = b, Avg = (a+b+c+d)/4, Last = (c+d)/2.
        let m2 = AccuracyMatrix::from_rows(&[vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        let got = mtil_metrics(&m2, false).unwrap();
        assert_relative_eq!(got.transfer, 0.2, epsilon = 1e-15);
        assert_relative_eq!(got.avg, 0.25, epsilon = 1e-15);
        assert_relative_eq!(got.last, 0.35, epsilon = 1e-15);

        // Hand-computed 3x3.
        let got = mtil_metrics(&hand_matrix(), false).unwrap();
        assert_relative_eq!(got.transfer, 0.4, epsilon = 1e-15);
        assert_relative_eq!(got.avg, 5.7 / 9.0, epsilon = 1e-15);
        assert_relative_eq!(got.last, 0.7, epsilon = 1e-15);

        // Printed-bound variant keeps the i-1 divisor but sums through i.
        let incl = mtil_metrics(&hand_matrix(), true).unwrap();
        assert_relative_eq!(incl.transfer, (1.1 + 0.8) / 2.0, epsilon = 1e-15);

        let single = AccuracyMatrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(
            mtil_metrics(&single, false),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn accuracy_values_validated() {
        let mut m = AccuracyMatrix::new(2).unwrap();
        assert!(m.set(0, 0, 1.2).is_err());
        assert!(m.set(0, 0, -0.1).is_err());
        assert!(m.set(2, 0, 0.5).is_err());
    }

    #[test]
    fn csv_contains_every_entry() {
        let csv = hand_matrix().to_csv();
        assert!(csv.starts_with("after_task,task_0,task_1,task_2\n"));
        assert!(csv.contains("0,0.9,0.4,0.3\n"));
        assert!(csv.contains("2,0.7,0.6,0.8\n"));
    }
}
