//! Positioning error metrics, availability and report files.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::{ecef_to_enu, EcefPosition};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no errors to aggregate")]
    Empty,
    #[error("baseline RMSE {baseline} does not exceed best-set RMSE {best}")]
    NoGap { baseline: f64, best: f64 },
    #[error("summary for '{method}' disagrees with its rows: {detail}")]
    Inconsistent { method: String, detail: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Norm of the ENU offset of `estimate` from `truth`.
pub fn error_3d(estimate: EcefPosition, truth: EcefPosition) -> f64 {
    ecef_to_enu(estimate, truth).norm()
}

pub fn rmse_3d(errors: &[f64]) -> Result<f64, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::Empty);
    }
    let sq = errors.iter().map(|e| e * e).sum::<f64>();
    Ok((sq / errors.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Availability {
    pub fraction: f64,
    /// Lengths of maximal runs of unsolved epochs, in stream order.
    pub gaps: Vec<usize>,
}

pub fn availability(solved: &[bool]) -> Availability {
    let mut gaps = Vec::new();
    let mut run = 0usize;
    for &s in solved {
        if s {
            if run > 0 {
                gaps.push(run);
            }
            run = 0;
        } else {
            run += 1;
        }
    }
    if run > 0 {
        gaps.push(run);
    }
    let fraction = if solved.is_empty() {
        0.0
    } else {
        solved.iter().filter(|&&s| s).count() as f64 / solved.len() as f64
    };
    Availability { fraction, gaps }
}

/// Percent of the baseline-to-best gap closed by `method`.
pub fn improvement_fraction(baseline_rmse: f64, method_rmse: f64, best_rmse: f64) -> Result<f64, EvalError> {
    if !(baseline_rmse > best_rmse) {
        return Err(EvalError::NoGap {
            baseline: baseline_rmse,
            best: best_rmse,
        });
    }
    Ok((baseline_rmse - method_rmse) / (baseline_rmse - best_rmse) * 100.0)
}

/// Percent of the baseline-to-best gap still left; complement of `improvement_fraction`.
pub fn remaining_gap_fraction(baseline_rmse: f64, method_rmse: f64, best_rmse: f64) -> Result<f64, EvalError> {
    Ok(100.0 - improvement_fraction(baseline_rmse, method_rmse, best_rmse)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub time: f64,
    pub method: String,
    /// Empty when the epoch was not solved.
    pub error_3d_m: Option<f64>,
    pub n_signals: usize,
    pub solved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    /// None when no epoch was solved.
    pub rmse_3d_m: Option<f64>,
    pub availability_fraction: f64,
    pub epoch_count: usize,
    pub solved_count: usize,
    pub gaps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summary: BTreeMap<String, MethodSummary>,
}

fn summarize(rows: &[&EvalRow]) -> MethodSummary {
    let errors: Vec<f64> = rows
        .iter()
        .filter(|r| r.solved)
        .filter_map(|r| r.error_3d_m)
        .collect();
    let solved: Vec<bool> = rows.iter().map(|r| r.solved).collect();
    let avail = availability(&solved);
    MethodSummary {
        rmse_3d_m: rmse_3d(&errors).ok(),
        availability_fraction: avail.fraction,
        epoch_count: rows.len(),
        solved_count: errors.len(),
        gaps: avail.gaps,
    }
}

impl EvalReport {
    /// Builds per-method summaries from the rows; rows keep their order.
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let mut by_method: BTreeMap<String, Vec<&EvalRow>> = BTreeMap::new();
        for r in &rows {
            by_method.entry(r.method.clone()).or_default().push(r);
        }
        let summary = by_method
            .into_iter()
            .map(|(m, rs)| (m, summarize(&rs)))
            .collect();
        EvalReport { rows, summary }
    }

    /// Recomputes every summary from the rows.
    pub fn check_consistency(&self) -> Result<(), EvalError> {
        let fresh = EvalReport::from_rows(self.rows.clone());
        for (method, s) in &self.summary {
            let Some(f) = fresh.summary.get(method) else {
                return Err(EvalError::Inconsistent {
                    method: method.clone(),
                    detail: "no rows".into(),
                });
            };
            let rmse_ok = match (s.rmse_3d_m, f.rmse_3d_m) {
                (Some(a), Some(b)) => (a - b).abs() <= 1e-9 * b.abs().max(1e-300),
                (None, None) => true,
                _ => false,
            };
            if !rmse_ok || s.epoch_count != f.epoch_count || s.solved_count != f.solved_count {
                return Err(EvalError::Inconsistent {
                    method: method.clone(),
                    detail: format!("stored {s:?}, recomputed {f:?}"),
                });
            }
        }
        if fresh.summary.len() != self.summary.len() {
            return Err(EvalError::Inconsistent {
                method: String::new(),
                detail: "method sets differ".into(),
            });
        }
        Ok(())
    }

    pub fn rmse(&self, method: &str) -> Option<f64> {
        self.summary.get(method)?.rmse_3d_m
    }

    pub fn merge(mut self, other: EvalReport) -> EvalReport {
        self.rows.extend(other.rows);
        EvalReport::from_rows(self.rows)
    }

    pub fn write_rows_csv<W: Write>(&self, sink: W) -> Result<(), EvalError> {
        self.check_consistency()?;
        let mut w = csv::Writer::from_writer(sink);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_json<W: Write>(&self, mut sink: W) -> Result<(), EvalError> {
        self.check_consistency()?;
        serde_json::to_writer_pretty(&mut sink, &self.summary)?;
        writeln!(sink)?;
        Ok(())
    }
}

/// Counts of `values` in `bins` equal-width bins over [0, 1]; 1.0 falls in the last bin.
pub fn weight_histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let bins = bins.max(1);
    let mut counts = vec![0usize; bins];
    for &v in values {
        if (0.0..=1.0).contains(&v) {
            let k = ((v * bins as f64) as usize).min(bins - 1);
            counts[k] += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (k as f64 / bins as f64, (k + 1) as f64 / bins as f64, c))
        .collect()
}

pub fn write_histogram_csv<W: Write>(sink: W, hist: &[(f64, f64, usize)]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["bin_lo", "bin_hi", "count"])?;
    for (lo, hi, c) in hist {
        w.write_record([lo.to_string(), hi.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
