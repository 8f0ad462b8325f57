//! Best-subset search against ground truth and the 0/1 labels it induces.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::error_3d;
use crate::features::{FeatureRecord, FEATURE_HEADER};
use crate::geodesy::EcefPosition;
use crate::gnss::{Constellation, SatelliteId};
use crate::ingest::{IngestError, Measurement};
use crate::solver::{minimum_measurements, solve_wls, SolverConfig, StateVector};

/// Errors within this distance (m) count as ties.
pub const TIE_TOLERANCE_M: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelingError {
    #[error("{n} signals exceed the enumeration cap of {cap}; use the beam search")]
    AboveCap { n: usize, cap: usize },
    #[error("{n} signals cannot form a solvable subset")]
    TooFew { n: usize },
    #[error("no subset produced a converged solution")]
    Unlabeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelingLimits {
    pub enumeration_cap: usize,
    pub beam_width: usize,
}

impl Default for LabelingLimits {
    fn default() -> Self {
        Self {
            enumeration_cap: 16,
            beam_width: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSetResult {
    /// Chosen signals in ascending (constellation, svid) order.
    pub chosen: Vec<SatelliteId>,
    pub error_3d: f64,
    pub position: EcefPosition,
    pub subsets_evaluated: usize,
    /// True when found by the beam search rather than full enumeration.
    pub approx: bool,
}

impl BestSetResult {
    pub fn contains(&self, sat: SatelliteId) -> bool {
        self.chosen.binary_search(&sat).is_ok()
    }
}

/// A subset as a bit mask over the epoch's measurements, with its outcome.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    mask: u64,
    error: f64,
    position: EcefPosition,
}

fn members(mask: u64, n: usize) -> impl Iterator<Item = usize> {
    (0..n).filter(move |i| mask & (1u64 << i) != 0)
}

fn admissible(mask: u64, meas: &[Measurement]) -> bool {
    let mut cs: Vec<Constellation> = members(mask, meas.len()).map(|i| meas[i].obs.constellation).collect();
    let size = cs.len();
    cs.sort();
    cs.dedup();
    size >= minimum_measurements(cs.len())
}

fn sorted_ids(mask: u64, meas: &[Measurement]) -> Vec<SatelliteId> {
    let mut ids: Vec<SatelliteId> = members(mask, meas.len()).map(|i| meas[i].sat()).collect();
    ids.sort();
    ids
}

fn evaluate(
    mask: u64,
    meas: &[Measurement],
    truth: EcefPosition,
    start: &StateVector,
    solver: &SolverConfig,
) -> Option<Candidate> {
    let w: Vec<f64> = (0..meas.len())
        .map(|i| if mask & (1u64 << i) != 0 { 1.0 } else { 0.0 })
        .collect();
    let sol = solve_wls(meas, &w, start, solver).ok()?;
    if !sol.converged {
        return None;
    }
    Some(Candidate {
        mask,
        error: error_3d(sol.position(), truth),
        position: sol.position(),
    })
}

/// Lowest error wins; within the tie tolerance the larger subset, then the
/// lexicographically smaller sorted id list.
fn pick(cands: &[Candidate], meas: &[Measurement]) -> Option<Candidate> {
    let best_err = cands.iter().map(|c| c.error).fold(f64::INFINITY, f64::min);
    if !best_err.is_finite() {
        return None;
    }
    cands
        .iter()
        .filter(|c| c.error <= best_err + TIE_TOLERANCE_M)
        .min_by(|a, b| compare_tied(a, b, meas))
        .copied()
}

fn compare_tied(a: &Candidate, b: &Candidate, meas: &[Measurement]) -> Ordering {
    b.mask
        .count_ones()
        .cmp(&a.mask.count_ones())
        .then_with(|| sorted_ids(a.mask, meas).cmp(&sorted_ids(b.mask, meas)))
}

fn warm_start(meas: &[Measurement], solver: &SolverConfig) -> StateVector {
    let all = vec![1.0; meas.len()];
    match solve_wls(meas, &all, &StateVector::earth_center(), solver) {
        Ok(s) if s.converged => s.state,
        _ => StateVector::earth_center(),
    }
}

fn finish(best: Candidate, meas: &[Measurement], evaluated: usize, approx: bool) -> BestSetResult {
    BestSetResult {
        chosen: sorted_ids(best.mask, meas),
        error_3d: best.error,
        position: best.position,
        subsets_evaluated: evaluated,
        approx,
    }
}

/// Exhaustive search over every solvable subset.
pub fn best_subset(
    meas: &[Measurement],
    truth: EcefPosition,
    limits: &LabelingLimits,
    solver: &SolverConfig,
) -> Result<BestSetResult, LabelingError> {
    let n = meas.len();
    if n > limits.enumeration_cap || n >= 64 {
        return Err(LabelingError::AboveCap {
            n,
            cap: limits.enumeration_cap,
        });
    }
    if n < minimum_measurements(1) {
        return Err(LabelingError::TooFew { n });
    }
    let start = warm_start(meas, solver);
    let masks: Vec<u64> = (1u64..(1u64 << n)).filter(|&m| admissible(m, meas)).collect();
    let cands: Vec<Candidate> = masks
        .par_iter()
        .filter_map(|&m| evaluate(m, meas, truth, &start, solver))
        .collect();
    let best = pick(&cands, meas).ok_or(LabelingError::Unlabeled)?;
    Ok(finish(best, meas, masks.len(), false))
}

/// Best-first removal search keeping the `beam_width` best subsets per size.
pub fn best_subset_beam(
    meas: &[Measurement],
    truth: EcefPosition,
    limits: &LabelingLimits,
    solver: &SolverConfig,
) -> Result<BestSetResult, LabelingError> {
    let n = meas.len();
    if n >= 64 {
        return Err(LabelingError::AboveCap { n, cap: 63 });
    }
    let full = (1u64 << n) - 1;
    if !admissible(full, meas) {
        return Err(LabelingError::TooFew { n });
    }
    let start = warm_start(meas, solver);
    let mut seen: HashSet<u64> = HashSet::new();
    seen.insert(full);
    let mut all: Vec<Candidate> = evaluate(full, meas, truth, &start, solver).into_iter().collect();
    let mut beam = all.clone();
    if beam.is_empty() {
        // The full set failed; seed the search with it anyway so children are explored.
        beam.push(Candidate {
            mask: full,
            error: f64::INFINITY,
            position: EcefPosition::ORIGIN,
        });
    }
    while !beam.is_empty() {
        let mut children: Vec<u64> = Vec::new();
        for c in &beam {
            for i in members(c.mask, n) {
                let child = c.mask & !(1u64 << i);
                if admissible(child, meas) && seen.insert(child) {
                    children.push(child);
                }
            }
        }
        children.sort_unstable();
        let mut evaluated: Vec<Candidate> = children
            .par_iter()
            .filter_map(|&m| evaluate(m, meas, truth, &start, solver))
            .collect();
        evaluated.sort_by(|a, b| a.error.total_cmp(&b.error).then_with(|| compare_tied(a, b, meas)));
        evaluated.truncate(limits.beam_width.max(1));
        all.extend(evaluated.iter().copied());
        beam = evaluated;
    }
    let best = pick(&all, meas).ok_or(LabelingError::Unlabeled)?;
    Ok(finish(best, meas, seen.len(), true))
}

/// Exhaustive search up to the cap, beam search above it.
pub fn label_epoch(
    meas: &[Measurement],
    truth: EcefPosition,
    limits: &LabelingLimits,
    solver: &SolverConfig,
) -> Result<BestSetResult, LabelingError> {
    if meas.len() <= limits.enumeration_cap {
        best_subset(meas, truth, limits, solver)
    } else {
        best_subset_beam(meas, truth, limits, solver)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub record: FeatureRecord,
    pub label: u8,
    pub best_set_error_3d: f64,
    pub approx: bool,
}

/// Label 1 for signals in the best set, 0 otherwise; no labels for an unlabeled epoch.
pub fn assign_labels(best: Option<&BestSetResult>, records: &[FeatureRecord]) -> Vec<LabeledSample> {
    let Some(best) = best else {
        return Vec::new();
    };
    records
        .iter()
        .map(|r| LabeledSample {
            record: r.clone(),
            label: u8::from(best.contains(r.sat())),
            best_set_error_3d: best.error_3d,
            approx: best.approx,
        })
        .collect()
}

/// Drops epochs with four or fewer signals.
pub fn filter_training_epochs<T>(epochs: Vec<Vec<T>>) -> Vec<Vec<T>> {
    epochs.into_iter().filter(|e| e.len() > 4).collect()
}

/// Splits samples into epochs of consecutive equal `epoch_time`.
pub fn group_by_epoch(samples: Vec<LabeledSample>) -> Vec<Vec<LabeledSample>> {
    let mut out: Vec<Vec<LabeledSample>> = Vec::new();
    for s in samples {
        match out.last_mut() {
            Some(e) if e[0].record.epoch_time == s.record.epoch_time => e.push(s),
            _ => out.push(vec![s]),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SampleRow {
    epoch_time: f64,
    constellation: Constellation,
    svid: u16,
    elevation_deg: f64,
    cn0_dbhz: Option<f64>,
    residual_m: f64,
    gdop_contribution: f64,
    rate_consistency_mps: Option<f64>,
    clock_offset_m: f64,
    residual_norm: f64,
    gdop_contribution_norm: f64,
    rate_consistency_norm: f64,
    clock_offset_norm: f64,
    elevation_norm: f64,
    cn0_norm: f64,
    gdop_sentinel: bool,
    ml_usable: bool,
    label: u8,
    best_set_error_3d_m: f64,
    approx: bool,
}

impl From<&LabeledSample> for SampleRow {
    fn from(s: &LabeledSample) -> Self {
        let r = &s.record;
        SampleRow {
            epoch_time: r.epoch_time,
            constellation: r.constellation,
            svid: r.svid,
            elevation_deg: r.elevation_deg,
            cn0_dbhz: r.cn0_dbhz,
            residual_m: r.residual_m,
            gdop_contribution: r.gdop_contribution,
            rate_consistency_mps: r.rate_consistency_mps,
            clock_offset_m: r.clock_offset_m,
            residual_norm: r.residual_norm,
            gdop_contribution_norm: r.gdop_contribution_norm,
            rate_consistency_norm: r.rate_consistency_norm,
            clock_offset_norm: r.clock_offset_norm,
            elevation_norm: r.elevation_norm,
            cn0_norm: r.cn0_norm,
            gdop_sentinel: r.gdop_sentinel,
            ml_usable: r.ml_usable,
            label: s.label,
            best_set_error_3d_m: s.best_set_error_3d,
            approx: s.approx,
        }
    }
}

impl From<SampleRow> for LabeledSample {
    fn from(r: SampleRow) -> Self {
        LabeledSample {
            record: FeatureRecord {
                epoch_time: r.epoch_time,
                constellation: r.constellation,
                svid: r.svid,
                elevation_deg: r.elevation_deg,
                cn0_dbhz: r.cn0_dbhz,
                residual_m: r.residual_m,
                gdop_contribution: r.gdop_contribution,
                rate_consistency_mps: r.rate_consistency_mps,
                clock_offset_m: r.clock_offset_m,
                residual_norm: r.residual_norm,
                gdop_contribution_norm: r.gdop_contribution_norm,
                rate_consistency_norm: r.rate_consistency_norm,
                clock_offset_norm: r.clock_offset_norm,
                elevation_norm: r.elevation_norm,
                cn0_norm: r.cn0_norm,
                gdop_sentinel: r.gdop_sentinel,
                ml_usable: r.ml_usable,
            },
            label: r.label,
            best_set_error_3d: r.best_set_error_3d_m,
            approx: r.approx,
        }
    }
}

/// Feature columns followed by `label, best_set_error_3d_m, approx`.
pub fn labeled_header() -> Vec<&'static str> {
    let mut h = FEATURE_HEADER.to_vec();
    h.extend(["label", "best_set_error_3d_m", "approx"]);
    h
}

pub fn write_labeled_csv<W: Write>(sink: W, samples: &[LabeledSample]) -> Result<(), IngestError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
    w.write_record(labeled_header())?;
    for s in samples {
        w.serialize(SampleRow::from(s))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labeled_csv<R: Read>(source: R) -> Result<Vec<LabeledSample>, IngestError> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers()?.clone();
    for name in labeled_header() {
        if !headers.iter().any(|h| h == name) {
            return Err(IngestError::MissingColumn(name.to_string()));
        }
    }
    let mut out = Vec::new();
    for (k, row) in reader.deserialize::<SampleRow>().enumerate() {
        let row = row?;
        if row.label > 1 {
            return Err(IngestError::data(k + 2, format!("label {} is not 0 or 1", row.label)));
        }
        out.push(row.into());
    }
    Ok(out)
}
