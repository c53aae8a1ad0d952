//! Exact-match scoring, sample-weighted aggregation and result tables.

mod tables;

pub use tables::{build_tables, emit_tables, Grid, Tables, REPORT_FILES};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Method, RunRecord, Strategy};
use crate::taskgen::TaskId;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("weighted average over no rows")]
    EmptyRows,
    #[error("row with zero test examples")]
    ZeroCount,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// True when both texts have the same whitespace-separated tokens. Case
/// matters.
pub fn exact_match(prediction: &str, gold: &str) -> bool {
    prediction.split_whitespace().eq(gold.split_whitespace())
}

/// `Σ em·n / Σ n` over `(em, n)` rows.
pub fn weighted_average(rows: &[(f64, usize)]) -> Result<f64, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyRows);
    }
    if rows.iter().any(|&(_, n)| n == 0) {
        return Err(EvalError::ZeroCount);
    }
    let total: usize = rows.iter().map(|r| r.1).sum();
    Ok(rows.iter().map(|&(em, n)| em * n as f64).sum::<f64>() / total as f64)
}

/// Correct predictions out of `n` test examples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskScore {
    pub n: usize,
    pub correct: usize,
}

impl TaskScore {
    /// Exact match in percent.
    pub fn em(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.n as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: TaskId,
    pub n: usize,
    pub em: f64,
}

/// Per-task scores of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub strategy: Option<Strategy>,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    pub weighted_avg: f64,
}

impl EvalReport {
    pub fn from_record(record: &RunRecord) -> Result<Self, EvalError> {
        let rows: Vec<ReportRow> =
            record.scores.iter().map(|(&task, s)| ReportRow { task, n: s.n, em: s.em() }).collect();
        let weighted_avg = weighted_average(&rows.iter().map(|r| (r.em, r.n)).collect::<Vec<_>>())?;
        Ok(EvalReport { method: record.method, strategy: record.strategy, seed: record.seed, rows, weighted_avg })
    }
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either side is constant or the lengths differ.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let mean = (xs.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}
