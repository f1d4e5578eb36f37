//! Forgetting metrics and the diagnostic analyses.

pub mod analysis;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use analysis::{
    drift_check, linear_fit, noise_sweep, norm_trace, prediction_snapshot, representation_correlation,
    CorrelationSummary, DriftProbe, DriftReport, LinearFit, NoisePoint, NoiseProbe, SnapshotRow,
};

/// `a[j][i]`: accuracy (percent) on task `i` after task `j` finished,
/// defined for `i <= j`. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    tasks: usize,
    rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub after_task: usize,
    pub eval_task: usize,
    pub accuracy_percent: f64,
}

impl AccuracyMatrix {
    pub fn new(tasks: usize) -> Self {
        Self {
            tasks,
            rows: Vec::with_capacity(tasks),
        }
    }

    /// Builds a full matrix from lower-triangular rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new(rows.len());
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn is_complete(&self) -> bool {
        self.rows.len() == self.tasks
    }

    /// Appends the evaluations made after the next task: one entry per task
    /// trained so far.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if self.rows.len() == self.tasks {
            return Err(Error::State("accuracy matrix already complete".into()));
        }
        if row.len() != self.rows.len() + 1 {
            return Err(Error::Shape(format!(
                "row {} needs {} entries, got {}",
                self.rows.len(),
                self.rows.len() + 1,
                row.len()
            )));
        }
        if let Some(bad) = row.iter().find(|a| !(0.0..=100.0).contains(*a)) {
            return Err(Error::Numeric(format!("accuracy {bad} outside [0, 100]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn get(&self, after: usize, task: usize) -> Option<f64> {
        self.rows.get(after).and_then(|r| r.get(task)).copied()
    }

    fn require_complete(&self) -> Result<()> {
        if self.is_complete() && self.tasks > 0 {
            Ok(())
        } else {
            Err(Error::State(format!(
                "accuracy matrix has {} of {} rows",
                self.rows.len(),
                self.tasks
            )))
        }
    }

    /// Final average accuracy: mean of the last row.
    pub fn acc(&self) -> Result<f64> {
        self.require_complete()?;
        let last = &self.rows[self.tasks - 1];
        Ok(last.iter().sum::<f64>() / self.tasks as f64)
    }

    /// Average maximum forgetting: mean over tasks `i < T` of
    /// `max_{j>i} (a[i][i] - a[j][i])`. Negative when accuracy only improved.
    pub fn amf(&self) -> Result<f64> {
        if self.tasks < 2 {
            return Err(Error::UndefinedMetric("AMF needs at least two tasks".into()));
        }
        self.require_complete()?;
        let t = self.tasks;
        let total: f64 = (0..t - 1)
            .map(|i| {
                (i + 1..t)
                    .map(|j| self.rows[i][i] - self.rows[j][i])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum();
        Ok(total / (t - 1) as f64)
    }

    /// 1-based records, row by row.
    pub fn records(&self) -> Vec<AccuracyRecord> {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(j, row)| {
                row.iter().enumerate().map(move |(i, &a)| AccuracyRecord {
                    after_task: j + 1,
                    eval_task: i + 1,
                    accuracy_percent: a,
                })
            })
            .collect()
    }
}

/// Mean and sample standard deviation (`n - 1`); the deviation of a single
/// value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn write_csv<T: Serialize>(out: impl Write, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    write_csv(std::fs::File::create(path)?, rows)
}
