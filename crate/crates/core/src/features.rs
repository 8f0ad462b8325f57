//! Per-signal quality features and their per-epoch normalization.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ephemeris::SatelliteState;
use crate::geodesy::{elevation_azimuth, EcefPosition};
use crate::gnss::{Constellation, SatelliteId, SPEED_OF_LIGHT};
use crate::ingest::{EpochData, IngestError, Measurement, SignalObservation};
use crate::solver::{
    build_geometry, gdop, solve_ols, GeometryMatrix, NavSolution, SolverConfig, SolverError,
    StateVector,
};

/// Column order of the model input vector.
pub const FEATURE_NAMES: [&str; 6] = [
    "residual",
    "gdop_contribution",
    "rate_consistency",
    "clock_offset",
    "elevation",
    "cn0",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DopplerSign {
    /// RINEX convention: positive Doppler means the range is shrinking.
    #[default]
    Rinex,
    /// Range rate equals Doppler times wavelength.
    Wavelength,
}

impl FromStr for DopplerSign {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rinex" => Ok(DopplerSign::Rinex),
            "wavelength" => Ok(DopplerSign::Wavelength),
            o => Err(format!("unknown doppler sign '{o}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// Clock offsets normalized within each constellation, all other features over the epoch.
    #[default]
    ClockPerConstellation,
    /// Every feature normalized over the whole epoch.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub elevation_mask_deg: f64,
    pub grouping: Grouping,
    pub doppler_sign: DopplerSign,
    /// Longest epoch spacing over which a predecessor is used for rate consistency (s).
    pub max_predecessor_gap_s: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            elevation_mask_deg: 15.0,
            grouping: Grouping::default(),
            doppler_sign: DopplerSign::default(),
            max_predecessor_gap_s: 2.0,
        }
    }
}

/// One signal's raw and normalized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub epoch_time: f64,
    pub constellation: Constellation,
    pub svid: u16,
    pub elevation_deg: f64,
    pub cn0_dbhz: Option<f64>,
    pub residual_m: f64,
    /// `inf` when removing the signal leaves a singular geometry.
    pub gdop_contribution: f64,
    pub rate_consistency_mps: Option<f64>,
    pub clock_offset_m: f64,
    pub residual_norm: f64,
    pub gdop_contribution_norm: f64,
    pub rate_consistency_norm: f64,
    pub clock_offset_norm: f64,
    pub elevation_norm: f64,
    pub cn0_norm: f64,
    pub gdop_sentinel: bool,
    /// False when the record was alone in a normalization group.
    pub ml_usable: bool,
}

impl FeatureRecord {
    pub fn sat(&self) -> SatelliteId {
        SatelliteId::new(self.constellation, self.svid)
    }

    /// Model input in `FEATURE_NAMES` order.
    pub fn feature_vector(&self) -> [f64; 6] {
        [
            self.residual_norm,
            self.gdop_contribution_norm,
            self.rate_consistency_norm,
            self.clock_offset_norm,
            self.elevation_norm,
            self.cn0_norm,
        ]
    }
}

/// Raw feature values for one signal before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatures {
    pub constellation: Constellation,
    pub svid: u16,
    pub elevation_deg: f64,
    pub cn0_dbhz: Option<f64>,
    pub residual_m: f64,
    pub gdop_contribution: f64,
    pub rate_consistency_mps: Option<f64>,
    pub clock_offset_m: f64,
}

/// Post-fit residuals of the all-satellite solution.
pub fn pseudorange_residuals(solution: &NavSolution) -> Vec<f64> {
    solution.residuals.clone()
}

/// GDOP increase caused by removing row `k`; `+inf` if the reduced geometry is singular.
pub fn gdop_contribution(geometry: &GeometryMatrix, k: usize) -> Result<f64, SolverError> {
    let full = gdop(geometry)?;
    match gdop(&geometry.without_row(k)) {
        Ok(reduced) => Ok(reduced - full),
        Err(_) => Ok(f64::INFINITY),
    }
}

/// Pseudorange rate from Doppler (m/s).
pub fn pseudorange_rate(obs: &SignalObservation, sign: DopplerSign) -> Option<f64> {
    let d = obs.doppler?;
    let rate = d * SPEED_OF_LIGHT / obs.carrier_frequency;
    Some(match sign {
        DopplerSign::Rinex => -rate,
        DopplerSign::Wavelength => rate,
    })
}

/// Difference between the pseudorange change per second and the Doppler range rate.
pub fn rate_consistency(
    prev: &SignalObservation,
    curr: &SignalObservation,
    dt: f64,
    sign: DopplerSign,
) -> Option<f64> {
    if prev.sat() != curr.sat() || !(dt > 0.0) {
        return None;
    }
    let rate = pseudorange_rate(curr, sign)?;
    Some((curr.pseudorange - prev.pseudorange) / dt - rate)
}

/// Receiver clock offset implied by one signal at the estimated position.
pub fn clock_offset_estimate(
    signal: &SignalObservation,
    sat_state: &SatelliteState,
    estimated_position: EcefPosition,
) -> f64 {
    signal.pseudorange + sat_state.clock_correction - sat_state.position.distance(&estimated_position)
}

/// Population z-scores; all zeros when the spread is zero.
pub fn zscores(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    if values.is_empty() {
        return Vec::new();
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

/// Fills `None` and non-finite entries with the mean of the present ones (0 if none).
fn impute(values: &[Option<f64>]) -> Vec<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    values
        .iter()
        .map(|v| match v {
            Some(x) if x.is_finite() => *x,
            _ => mean,
        })
        .collect()
}

/// Normalizes one epoch's raw features.
pub fn normalize_epoch(epoch_time: f64, raw: &[RawFeatures], grouping: Grouping) -> Vec<FeatureRecord> {
    let n = raw.len();
    let elevation = zscores(&raw.iter().map(|r| r.elevation_deg).collect::<Vec<_>>());
    let cn0 = zscores(&impute(&raw.iter().map(|r| r.cn0_dbhz).collect::<Vec<_>>()));
    let residual = zscores(&impute(&raw.iter().map(|r| Some(r.residual_m)).collect::<Vec<_>>()));
    let max_finite = raw
        .iter()
        .map(|r| r.gdop_contribution)
        .filter(|g| g.is_finite())
        .fold(f64::NAN, f64::max);
    let gdop_vals: Vec<f64> = raw
        .iter()
        .map(|r| {
            if r.gdop_contribution.is_finite() {
                r.gdop_contribution
            } else if max_finite.is_finite() {
                max_finite
            } else {
                0.0
            }
        })
        .collect();
    let gdop_z = zscores(&gdop_vals);
    let rate = zscores(&impute(&raw.iter().map(|r| r.rate_consistency_mps).collect::<Vec<_>>()));

    let mut clock = vec![0.0; n];
    let mut usable = vec![n >= 2; n];
    match grouping {
        Grouping::Pooled => {
            clock = zscores(&raw.iter().map(|r| r.clock_offset_m).collect::<Vec<_>>());
        }
        Grouping::ClockPerConstellation => {
            for c in Constellation::ALL {
                let idx: Vec<usize> = (0..n).filter(|&i| raw[i].constellation == c).collect();
                let z = zscores(&idx.iter().map(|&i| raw[i].clock_offset_m).collect::<Vec<_>>());
                for (&i, v) in idx.iter().zip(z) {
                    clock[i] = v;
                    if idx.len() < 2 {
                        usable[i] = false;
                    }
                }
            }
        }
    }

    raw.iter()
        .enumerate()
        .map(|(i, r)| FeatureRecord {
            epoch_time,
            constellation: r.constellation,
            svid: r.svid,
            elevation_deg: r.elevation_deg,
            cn0_dbhz: r.cn0_dbhz,
            residual_m: r.residual_m,
            gdop_contribution: r.gdop_contribution,
            rate_consistency_mps: r.rate_consistency_mps,
            clock_offset_m: r.clock_offset_m,
            residual_norm: residual[i].abs(),
            gdop_contribution_norm: gdop_z[i],
            rate_consistency_norm: rate[i].abs(),
            clock_offset_norm: clock[i].abs(),
            elevation_norm: elevation[i],
            cn0_norm: cn0[i],
            gdop_sentinel: !r.gdop_contribution.is_finite(),
            ml_usable: usable[i],
        })
        .collect()
}

/// Elevation (degrees) of every measurement seen from `receiver`.
pub fn elevations_deg(epoch: &EpochData, receiver: EcefPosition) -> Vec<f64> {
    epoch
        .measurements
        .iter()
        .map(|m| {
            elevation_azimuth(receiver, m.state.position)
                .map(|(el, _)| el.to_degrees())
                .unwrap_or(f64::NAN)
        })
        .collect()
}

/// Keeps signals at or above `mask_deg`. `elevations` is aligned with the measurements.
pub fn apply_elevation_mask(epoch: &EpochData, elevations: &[f64], mask_deg: f64) -> (EpochData, Vec<f64>) {
    let mut kept = Vec::new();
    let mut kept_el = Vec::new();
    for (m, &el) in epoch.measurements.iter().zip(elevations) {
        if mask_deg <= 0.0 || el >= mask_deg {
            kept.push(m.clone());
            kept_el.push(el);
        }
    }
    (
        EpochData {
            time: epoch.time,
            measurements: kept,
        },
        kept_el,
    )
}

/// Masked epoch, its all-satellite OLS solution and one feature record per remaining signal.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochFeatures {
    pub epoch: EpochData,
    pub ols: NavSolution,
    pub records: Vec<FeatureRecord>,
}

impl EpochFeatures {
    pub fn measurements(&self) -> &[Measurement] {
        &self.epoch.measurements
    }
}

/// All-satellite OLS with the elevation mask applied, re-solving after masking.
pub fn masked_ols(
    epoch: &EpochData,
    mask_deg: f64,
    solver: &SolverConfig,
) -> Result<(EpochData, Vec<f64>, NavSolution), SolverError> {
    let first = solve_ols(&epoch.measurements, &StateVector::earth_center(), solver)?;
    let el = elevations_deg(epoch, first.position());
    let (masked, el) = apply_elevation_mask(epoch, &el, mask_deg);
    if masked.measurements.len() == epoch.measurements.len() {
        return Ok((masked, el, first));
    }
    let sol = solve_ols(&masked.measurements, &first.state, solver)?;
    let el = elevations_deg(&masked, sol.position());
    Ok((masked, el, sol))
}

/// Features for one epoch; `prev` is the preceding epoch of the stream, if any.
pub fn extract_epoch_features(
    epoch: &EpochData,
    prev: Option<&EpochData>,
    cfg: &FeatureConfig,
    solver: &SolverConfig,
) -> Result<EpochFeatures, SolverError> {
    let (masked, elevation, ols) = masked_ols(epoch, cfg.elevation_mask_deg, solver)?;
    let meas = &masked.measurements;
    let (geometry, _) = build_geometry(meas, &ols.state)?;
    let residuals = pseudorange_residuals(&ols);

    let predecessors: HashMap<SatelliteId, &SignalObservation> = match prev {
        Some(p) if masked.time - p.time > 0.0 && masked.time - p.time <= cfg.max_predecessor_gap_s => {
            p.measurements.iter().map(|m| (m.sat(), &m.obs)).collect()
        }
        _ => HashMap::new(),
    };
    let dt = prev.map(|p| masked.time - p.time).unwrap_or(0.0);

    let mut raw = Vec::with_capacity(meas.len());
    for (k, m) in meas.iter().enumerate() {
        raw.push(RawFeatures {
            constellation: m.obs.constellation,
            svid: m.obs.svid,
            elevation_deg: elevation[k],
            cn0_dbhz: m.obs.cn0,
            residual_m: residuals[k],
            gdop_contribution: gdop_contribution(&geometry, k)?,
            rate_consistency_mps: predecessors
                .get(&m.sat())
                .and_then(|p| rate_consistency(p, &m.obs, dt, cfg.doppler_sign)),
            clock_offset_m: clock_offset_estimate(&m.obs, &m.state, ols.position()),
        });
    }
    let records = normalize_epoch(masked.time, &raw, cfg.grouping);
    Ok(EpochFeatures {
        epoch: masked,
        ols,
        records,
    })
}

/// Features for a whole stream; each epoch is processed independently.
pub fn extract_features(
    epochs: &[EpochData],
    cfg: &FeatureConfig,
    solver: &SolverConfig,
) -> Vec<Result<EpochFeatures, SolverError>> {
    (0..epochs.len())
        .into_par_iter()
        .map(|i| {
            let prev = if i > 0 { Some(&epochs[i - 1]) } else { None };
            extract_epoch_features(&epochs[i], prev, cfg, solver)
        })
        .collect()
}

pub const FEATURE_HEADER: [&str; 17] = [
    "epoch_time",
    "constellation",
    "svid",
    "elevation_deg",
    "cn0_dbhz",
    "residual_m",
    "gdop_contribution",
    "rate_consistency_mps",
    "clock_offset_m",
    "residual_norm",
    "gdop_contribution_norm",
    "rate_consistency_norm",
    "clock_offset_norm",
    "elevation_norm",
    "cn0_norm",
    "gdop_sentinel",
    "ml_usable",
];

pub fn write_feature_csv<W: Write>(sink: W, records: &[FeatureRecord]) -> Result<(), IngestError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
    w.write_record(FEATURE_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_csv<R: Read>(source: R) -> Result<Vec<FeatureRecord>, IngestError> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers()?.clone();
    for name in FEATURE_HEADER {
        if !headers.iter().any(|h| h == name) {
            return Err(IngestError::MissingColumn(name.to_string()));
        }
    }
    reader
        .deserialize()
        .map(|r| r.map_err(IngestError::from))
        .collect()
}
