//! Iterative linearized least squares with one receiver clock state per constellation.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::EcefPosition;
use crate::gnss::Constellation;
use crate::ingest::Measurement;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("singular geometry (condition number {condition:.3e})")]
    Singular { condition: f64 },
    #[error("{usable} usable measurements, {required} required")]
    Insufficient { usable: usize, required: usize },
    #[error("satellite {index} coincides with the linearization point")]
    Coincident { index: usize },
    #[error("{weights} weights for {measurements} measurements")]
    WeightCount { weights: usize, measurements: usize },
    #[error("weight {value} at index {index} is negative or not finite")]
    InvalidWeight { index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Stop when the state update norm falls below this (meters).
    pub tol_m: f64,
    pub max_iter: usize,
    /// Weights below this are treated as zero and their rows excluded.
    pub weight_floor: f64,
    /// Largest accepted condition number of the normal matrix.
    pub condition_limit: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_m: 1e-4,
            max_iter: 10,
            weight_floor: 1e-6,
            condition_limit: 1e12,
        }
    }
}

/// Receiver position plus a clock offset (meters) for each constellation in use.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StateVector {
    pub position: EcefPosition,
    pub clock_offsets: BTreeMap<Constellation, f64>,
}

impl StateVector {
    /// Earth center with zero clocks.
    pub fn earth_center() -> Self {
        Self::default()
    }

    pub fn new(position: EcefPosition, clocks: &[(Constellation, f64)]) -> Self {
        Self {
            position,
            clock_offsets: clocks.iter().copied().collect(),
        }
    }

    pub fn clock(&self, c: Constellation) -> Option<f64> {
        self.clock_offsets.get(&c).copied()
    }
}

/// Measurement matrix: unit line-of-sight partials then one 0/1 clock column per constellation.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryMatrix {
    pub matrix: DMatrix<f64>,
    pub constellations: Vec<Constellation>,
}

impl GeometryMatrix {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn columns(&self) -> usize {
        self.matrix.ncols()
    }

    /// Same geometry without row `k`.
    pub fn without_row(&self, k: usize) -> GeometryMatrix {
        GeometryMatrix {
            matrix: self.matrix.clone().remove_row(k),
            constellations: self.constellations.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavSolution {
    pub state: StateVector,
    /// Post-fit residual per measurement (meters); NaN when the row's
    /// constellation has no clock state because all its weights were floored.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub weights_used: Vec<f64>,
}

impl NavSolution {
    pub fn position(&self) -> EcefPosition {
        self.state.position
    }
}

/// Smallest measurement count that determines position and `n_constellations` clocks.
pub fn minimum_measurements(n_constellations: usize) -> usize {
    3 + n_constellations
}

fn constellations_of<'a>(measurements: impl Iterator<Item = &'a Measurement>) -> Vec<Constellation> {
    let mut cs: Vec<Constellation> = measurements.map(|m| m.obs.constellation).collect();
    cs.sort();
    cs.dedup();
    cs
}

/// Unevaluated sum `hi + lo` carrying about 106 bits.
#[derive(Clone, Copy)]
struct Dd(f64, f64);

impl Dd {
    fn from(a: f64) -> Dd {
        Dd(a, 0.0)
    }

    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        Dd(s, (a - (s - bb)) + (b - bb))
    }

    fn two_prod(a: f64, b: f64) -> Dd {
        let p = a * b;
        Dd(p, a.mul_add(b, -p))
    }

    fn add(self, o: Dd) -> Dd {
        let s = Dd::two_sum(self.0, o.0);
        let t = Dd::two_sum(self.1, o.1);
        let v = Dd::two_sum(s.0, s.1 + t.0);
        Dd::two_sum(v.0, v.1 + t.1)
    }

    fn neg(self) -> Dd {
        Dd(-self.0, -self.1)
    }

    fn square(self) -> Dd {
        let p = Dd::two_prod(self.0, self.0);
        Dd::two_sum(p.0, p.1 + 2.0 * self.0 * self.1)
    }

    fn sqrt(self) -> Dd {
        if self.0 <= 0.0 {
            return Dd::from(0.0);
        }
        let r = self.0.sqrt();
        let diff = self.add(Dd::two_prod(r, r).neg());
        Dd::two_sum(r, diff.0 / (2.0 * r))
    }
}

/// Pseudorange corrected for the satellite clock minus the modeled range and receiver clock.
///
/// Evaluated in double-double so the result keeps sub-nanometer resolution
/// despite both terms being ~2e7 m.
fn prefit_residual(m: &Measurement, state: &StateVector) -> f64 {
    let s = m.state.position;
    let x = state.position;
    let dx = Dd::two_sum(s.x, -x.x);
    let dy = Dd::two_sum(s.y, -x.y);
    let dz = Dd::two_sum(s.z, -x.z);
    let range = dx.square().add(dy.square()).add(dz.square()).sqrt();
    let clock = state.clock(m.obs.constellation).unwrap_or(0.0);
    let r = Dd::two_sum(m.obs.pseudorange, m.state.clock_correction)
        .add(Dd::from(-clock))
        .add(range.neg());
    r.0 + r.1
}

fn geometry_rows(
    measurements: &[&Measurement],
    lin: &StateVector,
    constellations: &[Constellation],
) -> Result<(GeometryMatrix, DVector<f64>), SolverError> {
    let n = measurements.len();
    let cols = 3 + constellations.len();
    let mut h = DMatrix::zeros(n, cols);
    let mut dz = DVector::zeros(n);
    for (i, m) in measurements.iter().enumerate() {
        let los = m.state.position - lin.position;
        let range = los.norm();
        if range == 0.0 {
            return Err(SolverError::Coincident { index: i });
        }
        h[(i, 0)] = -los.x / range;
        h[(i, 1)] = -los.y / range;
        h[(i, 2)] = -los.z / range;
        if let Some(c) = constellations.iter().position(|&c| c == m.obs.constellation) {
            h[(i, 3 + c)] = 1.0;
        }
        dz[i] = prefit_residual(m, lin);
    }
    Ok((
        GeometryMatrix {
            matrix: h,
            constellations: constellations.to_vec(),
        },
        dz,
    ))
}

/// Geometry matrix and prefit residuals at `linearization_point`, with clock
/// columns for the constellations present in `measurements`.
pub fn build_geometry(
    measurements: &[Measurement],
    linearization_point: &StateVector,
) -> Result<(GeometryMatrix, DVector<f64>), SolverError> {
    let refs: Vec<&Measurement> = measurements.iter().collect();
    let cs = constellations_of(measurements.iter());
    geometry_rows(&refs, linearization_point, &cs)
}

/// Solves `normal * x = rhs` through an SVD of the symmetric normal matrix.
fn solve_normal(
    normal: DMatrix<f64>,
    rhs: &DVector<f64>,
    condition_limit: f64,
) -> Result<DVector<f64>, SolverError> {
    let svd = normal.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= condition_limit) {
        return Err(SolverError::Singular { condition });
    }
    svd.solve(rhs, 0.0)
        .map_err(|_| SolverError::Singular { condition })
}

/// Inverse of `HᵀH`, refusing ill-conditioned geometry.
pub fn normal_inverse(geometry: &GeometryMatrix, condition_limit: f64) -> Result<DMatrix<f64>, SolverError> {
    let h = &geometry.matrix;
    let normal = h.transpose() * h;
    let k = normal.nrows();
    solve_normal_matrix(normal, DMatrix::identity(k, k), condition_limit)
}

fn solve_normal_matrix(
    normal: DMatrix<f64>,
    rhs: DMatrix<f64>,
    condition_limit: f64,
) -> Result<DMatrix<f64>, SolverError> {
    let svd = normal.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= condition_limit) {
        return Err(SolverError::Singular { condition });
    }
    svd.solve(&rhs, 0.0)
        .map_err(|_| SolverError::Singular { condition })
}

pub const GDOP_CONDITION_LIMIT: f64 = 1e12;

/// Geometric dilution of precision, `sqrt(tr((HᵀH)⁻¹))`.
pub fn gdop(geometry: &GeometryMatrix) -> Result<f64, SolverError> {
    if geometry.rows() < geometry.columns() {
        return Err(SolverError::Singular {
            condition: f64::INFINITY,
        });
    }
    let inv = normal_inverse(geometry, GDOP_CONDITION_LIMIT)?;
    Ok(inv.trace().sqrt())
}

/// Weighted sum of squared prefit residuals at `state` over rows above the weight floor.
pub fn wls_objective(
    measurements: &[Measurement],
    weights: &[f64],
    state: &StateVector,
    config: &SolverConfig,
) -> f64 {
    measurements
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w >= config.weight_floor)
        .map(|(m, &w)| {
            let r = prefit_residual(m, state);
            w * r * r
        })
        .sum()
}

/// Post-fit residuals for every measurement at `state`.
pub fn residuals_at(measurements: &[Measurement], state: &StateVector) -> Vec<f64> {
    measurements
        .iter()
        .map(|m| match state.clock(m.obs.constellation) {
            Some(_) => prefit_residual(m, state),
            None => f64::NAN,
        })
        .collect()
}

/// Gauss-Newton weighted least squares: `Δx = (HᵀWH)⁻¹HᵀWΔρ` until `|Δx| < tol`.
///
/// Rows whose weight is below `weight_floor` are left out, and a constellation
/// without any remaining row loses its clock state.
pub fn solve_wls(
    measurements: &[Measurement],
    weights: &[f64],
    initial: &StateVector,
    config: &SolverConfig,
) -> Result<NavSolution, SolverError> {
    if weights.len() != measurements.len() {
        return Err(SolverError::WeightCount {
            weights: weights.len(),
            measurements: measurements.len(),
        });
    }
    if let Some((index, &value)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !w.is_finite() || **w < 0.0)
    {
        return Err(SolverError::InvalidWeight { index, value });
    }
    let used: Vec<usize> = (0..measurements.len())
        .filter(|&i| weights[i] >= config.weight_floor)
        .collect();
    let rows: Vec<&Measurement> = used.iter().map(|&i| &measurements[i]).collect();
    let row_weights: Vec<f64> = used.iter().map(|&i| weights[i]).collect();
    let constellations = constellations_of(rows.iter().copied());
    let required = minimum_measurements(constellations.len()).max(4);
    if rows.len() < required {
        return Err(SolverError::Insufficient {
            usable: rows.len(),
            required,
        });
    }

    let mut state = StateVector {
        position: initial.position,
        clock_offsets: constellations
            .iter()
            .map(|&c| (c, initial.clock(c).unwrap_or(0.0)))
            .collect(),
    };
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        iterations += 1;
        let (geometry, dz) = geometry_rows(&rows, &state, &constellations)?;
        let h = &geometry.matrix;
        let mut hw = h.transpose();
        for (j, &w) in row_weights.iter().enumerate() {
            hw.column_mut(j).scale_mut(w);
        }
        let normal = &hw * h;
        let rhs = &hw * &dz;
        let dx = solve_normal(normal, &rhs, config.condition_limit)?;

        state.position = state.position + EcefPosition::new(dx[0], dx[1], dx[2]);
        for (k, c) in constellations.iter().enumerate() {
            *state.clock_offsets.get_mut(c).expect("clock state present") += dx[3 + k];
        }
        if dx.norm() < config.tol_m {
            converged = true;
            break;
        }
    }

    let mut weights_used = vec![0.0; measurements.len()];
    for &i in &used {
        weights_used[i] = weights[i];
    }
    Ok(NavSolution {
        residuals: residuals_at(measurements, &state),
        state,
        iterations,
        converged,
        weights_used,
    })
}

/// Ordinary least squares: `solve_wls` with unit weights.
pub fn solve_ols(
    measurements: &[Measurement],
    initial: &StateVector,
    config: &SolverConfig,
) -> Result<NavSolution, SolverError> {
    solve_wls(measurements, &vec![1.0; measurements.len()], initial, config)
}
