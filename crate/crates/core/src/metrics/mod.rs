//! Continual-learning metrics over a stage-by-task accuracy matrix, and a
//! rule-based error taxonomy for per-example predictions.

mod errors;
mod fixtures;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use errors::{
    classify_error, classify_errors, error_metrics, ErrorLabel, ErrorMetrics, LabelCounts, PredictionRecord,
};
pub use fixtures::{reference_tables, ReferenceTable, ReportedTriple};

/// `rows[j][i]`: accuracy (percent) on task `i` after training stage `j`,
/// defined for `i <= j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub task_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForgettingMode {
    /// Mean of `A[i][i] - A[T][i]` over earlier tasks.
    DiagRef,
    /// Mean of `A[T][i] - max_{i <= j < T} A[j][i]`.
    MaxRef,
}

impl AccuracyMatrix {
    /// Checks triangular shape and value range. A matrix may be partial
    /// (fewer rows than tasks) while a run is in progress.
    pub fn new(task_ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = Self { task_ids, rows };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.len() > self.task_ids.len() {
            return Err(Error::validation("more stages than tasks"));
        }
        for (j, row) in self.rows.iter().enumerate() {
            if row.len() != j + 1 {
                return Err(Error::validation(format!(
                    "stage {j} has {} entries, expected {}",
                    row.len(),
                    j + 1
                )));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=100.0).contains(*v)) {
                return Err(Error::validation(format!("accuracy {v} outside [0, 100]")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Completed stages.
    pub fn stages(&self) -> usize {
        self.rows.len()
    }

    pub fn is_complete(&self) -> bool {
        !self.rows.is_empty() && self.rows.len() == self.task_ids.len()
    }

    pub fn get(&self, stage: usize, task: usize) -> Option<f64> {
        self.rows.get(stage)?.get(task).copied()
    }

    fn require_complete(&self) -> Result<()> {
        if !self.is_complete() {
            return Err(Error::validation(format!(
                "matrix has {} of {} stages",
                self.rows.len(),
                self.task_ids.len()
            )));
        }
        Ok(())
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

/// Mean of row `stage`.
pub fn avg_acc(m: &AccuracyMatrix, stage: usize) -> Result<f64> {
    let row = m
        .rows
        .get(stage)
        .ok_or_else(|| Error::Lookup(format!("stage {stage} not in matrix")))?;
    Ok(mean(row.iter().copied()))
}

/// Mean of the diagonal.
pub fn new_acc(m: &AccuracyMatrix) -> Result<f64> {
    m.require_complete()?;
    Ok(mean(m.rows.iter().enumerate().map(|(i, r)| r[i])))
}

/// `None` when only one task exists.
pub fn forgetting(m: &AccuracyMatrix, mode: ForgettingMode) -> Result<Option<f64>> {
    m.require_complete()?;
    let t = m.rows.len();
    if t < 2 {
        return Ok(None);
    }
    let last = &m.rows[t - 1];
    let per_task = (0..t - 1).map(|i| match mode {
        ForgettingMode::DiagRef => m.rows[i][i] - last[i],
        ForgettingMode::MaxRef => {
            let best = (i..t - 1).map(|j| m.rows[j][i]).fold(f64::NEG_INFINITY, f64::max);
            last[i] - best
        }
    });
    Ok(Some(mean(per_task)))
}

/// Average accuracy after every stage.
pub fn trajectory(m: &AccuracyMatrix) -> Vec<f64> {
    (0..m.rows.len())
        .map(|j| avg_acc(m, j).expect("stage exists"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub avg_acc: f64,
    pub new_acc: f64,
    pub forgetting: Option<f64>,
    pub forgetting_max_ref: Option<f64>,
    pub avg_hal: Option<f64>,
    pub avg_iuf: Option<f64>,
    pub avg_oth: Option<f64>,
    pub trajectory: Vec<f64>,
}

pub fn report(m: &AccuracyMatrix, errors: Option<&ErrorMetrics>) -> Result<MetricReport> {
    m.require_complete()?;
    Ok(MetricReport {
        avg_acc: avg_acc(m, m.rows.len() - 1)?,
        new_acc: new_acc(m)?,
        forgetting: forgetting(m, ForgettingMode::DiagRef)?,
        forgetting_max_ref: forgetting(m, ForgettingMode::MaxRef)?,
        avg_hal: errors.map(|e| e.hal),
        avg_iuf: errors.map(|e| e.iuf),
        avg_oth: errors.map(|e| e.oth),
        trajectory: trajectory(m),
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mu = mean(values.iter().copied());
    let var = mean(values.iter().map(|v| (v - mu) * (v - mu)));
    Some((mu, var.sqrt()))
}

/// One-sided exact sign test: probability of at least `wins` successes out
/// of `n` fair coin flips. Ties should be dropped before calling.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    assert!(wins <= n);
    let total = 2f64.powi(n as i32);
    let mut tail = 0.0;
    for k in wins..=n {
        tail += binomial(n, k);
    }
    tail / total
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i}")).collect()
    }

    #[test]
    fn single_cell() {
        let m = AccuracyMatrix::new(ids(1), vec![vec![62.10]]).unwrap();
        assert_eq!(avg_acc(&m, 0).unwrap(), 62.10);
        assert_eq!(new_acc(&m).unwrap(), 62.10);
        assert_eq!(forgetting(&m, ForgettingMode::DiagRef).unwrap(), None);
    }

    #[test]
    fn constant_diagonal() {
        let m = AccuracyMatrix::new(ids(3), vec![vec![7.0], vec![1.0, 7.0], vec![7.0, 7.0, 7.0]]).unwrap();
        assert_eq!(new_acc(&m).unwrap(), 7.0);
        assert_eq!(forgetting(&m, ForgettingMode::DiagRef).unwrap(), Some(0.0));
        // max-ref sees the dip of task 0 at stage 1 as recovered, not forgotten
        assert_eq!(forgetting(&m, ForgettingMode::MaxRef).unwrap(), Some(0.0));
    }

    #[test]
    fn shape_checks() {
        assert!(AccuracyMatrix::new(ids(2), vec![vec![1.0, 2.0]]).is_err());
        assert!(AccuracyMatrix::new(ids(1), vec![vec![101.0]]).is_err());
        assert!(AccuracyMatrix::new(ids(1), vec![vec![1.0], vec![1.0, 1.0]]).is_err());
        let partial = AccuracyMatrix::new(ids(2), vec![vec![1.0]]).unwrap();
        assert!(new_acc(&partial).is_err());
        assert!(avg_acc(&partial, 1).is_err());
    }

    #[test]
    fn sign_test_values() {
        assert_eq!(sign_test_p(5, 5), 1.0 / 32.0);
        assert_eq!(sign_test_p(4, 5), 6.0 / 32.0);
        assert_eq!(sign_test_p(0, 5), 1.0);
    }

    #[test]
    fn mean_std_basic() {
        assert_eq!(mean_std(&[2.0, 4.0]), Some((3.0, 1.0)));
        assert_eq!(mean_std(&[5.0]), Some((5.0, 0.0)));
        assert_eq!(mean_std(&[]), None);
    }
}
