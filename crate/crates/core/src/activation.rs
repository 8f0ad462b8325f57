//! Score-to-weight mappings and the sigmoid steepness sweep.

use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{error_3d, rmse_3d};
use crate::geodesy::EcefPosition;
use crate::ingest::Measurement;
use crate::solver::{solve_ols, solve_wls, NavSolution, SolverConfig, SolverError, StateVector};

/// Step by which the unit-step threshold is lowered until enough signals pass.
pub const THRESHOLD_STEP: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActivationError {
    #[error("sigmoid steepness must be positive, got {0}")]
    Steepness(f64),
    #[error("threshold {0} is outside [0, 1]")]
    Threshold(f64),
    #[error("no scores to activate")]
    Empty,
    #[error("score {0} is outside [0, 1]")]
    Score(f64),
    #[error("empty b grid")]
    EmptyGrid,
    #[error("no epoch could be solved for any b")]
    NothingSolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Constant,
    Linear,
    UnitStep,
    Relu,
    #[default]
    Sigmoid,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 5] = [
        ActivationKind::Constant,
        ActivationKind::Linear,
        ActivationKind::UnitStep,
        ActivationKind::Relu,
        ActivationKind::Sigmoid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActivationKind::Constant => "constant",
            ActivationKind::Linear => "linear",
            ActivationKind::UnitStep => "unit_step",
            ActivationKind::Relu => "relu",
            ActivationKind::Sigmoid => "sigmoid",
        }
    }
}

impl FromStr for ActivationKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActivationKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown activation '{s}'"))
    }
}

impl std::fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActivationSpec {
    pub kind: ActivationKind,
    /// Fixed threshold (unit step, ReLU) or shift (sigmoid). `None` uses the
    /// epoch mean for unit step and sigmoid and the epoch minimum for ReLU.
    pub shift: Option<f64>,
    /// Sigmoid steepness.
    pub b: f64,
}

impl Default for ActivationSpec {
    fn default() -> Self {
        Self {
            kind: ActivationKind::Sigmoid,
            shift: None,
            b: 100.0,
        }
    }
}

impl ActivationSpec {
    pub fn of(kind: ActivationKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn sigmoid(b: f64) -> Self {
        Self {
            kind: ActivationKind::Sigmoid,
            shift: None,
            b,
        }
    }

    pub fn validate(&self) -> Result<(), ActivationError> {
        if self.kind == ActivationKind::Sigmoid && !(self.b > 0.0 && self.b.is_finite()) {
            return Err(ActivationError::Steepness(self.b));
        }
        if let Some(t) = self.shift {
            if !(0.0..=1.0).contains(&t) {
                return Err(ActivationError::Threshold(t));
            }
        }
        Ok(())
    }
}

/// Per-signal weights in `[0, 1]`, aligned with the epoch's signal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    /// Threshold or shift actually used, if the activation has one.
    pub threshold: Option<f64>,
    /// Set when the unit step could not pass enough signals and all weights are 1.
    pub fallback: bool,
}

pub fn sigmoid(score: f64, a: f64, b: f64) -> f64 {
    let z = -b * (score - a);
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

pub fn relu(score: f64, tau: f64) -> f64 {
    if tau >= 1.0 {
        return 0.0;
    }
    ((score - tau) / (1.0 - tau)).clamp(0.0, 1.0)
}

pub fn unit_step(score: f64, tau: f64) -> f64 {
    if score >= tau {
        1.0
    } else {
        0.0
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Maps one epoch's scores to weights.
pub fn apply_activation(
    scores: &[f64],
    spec: &ActivationSpec,
    solvability_min: usize,
) -> Result<WeightVector, ActivationError> {
    spec.validate()?;
    if scores.is_empty() {
        return Err(ActivationError::Empty);
    }
    if let Some(&s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(ActivationError::Score(s));
    }
    let out = |weights: Vec<f64>, threshold: Option<f64>| WeightVector {
        weights,
        threshold,
        fallback: false,
    };
    Ok(match spec.kind {
        ActivationKind::Constant => out(vec![1.0; scores.len()], None),
        ActivationKind::Linear => out(scores.to_vec(), None),
        ActivationKind::Relu => {
            let tau = spec
                .shift
                .unwrap_or_else(|| scores.iter().copied().fold(f64::INFINITY, f64::min));
            out(scores.iter().map(|&s| relu(s, tau)).collect(), Some(tau))
        }
        ActivationKind::Sigmoid => {
            let a = spec.shift.unwrap_or_else(|| mean(scores));
            out(scores.iter().map(|&s| sigmoid(s, a, spec.b)).collect(), Some(a))
        }
        ActivationKind::UnitStep => {
            let start = spec.shift.unwrap_or_else(|| mean(scores));
            let passing = |tau: f64| scores.iter().filter(|&&s| s >= tau).count();
            let mut k = 0u32;
            loop {
                let tau = (start - THRESHOLD_STEP * f64::from(k)).max(0.0);
                if passing(tau) >= solvability_min {
                    break out(scores.iter().map(|&s| unit_step(s, tau)).collect(), Some(tau));
                }
                if tau <= 0.0 {
                    break WeightVector {
                        weights: vec![1.0; scores.len()],
                        threshold: Some(0.0),
                        fallback: true,
                    };
                }
                k += 1;
            }
        }
    })
}

/// One evaluation epoch: measurements, their predicted scores and the true position.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEpoch {
    pub time: f64,
    pub measurements: Vec<Measurement>,
    pub scores: Vec<f64>,
    pub truth: EcefPosition,
}

/// Result of positioning one epoch with activated weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochPosition {
    pub solution: Option<NavSolution>,
    pub weights: Vec<f64>,
    /// Set when the activated weights were unsolvable and unit weights were used.
    pub fallback: bool,
}

fn distinct_constellations(meas: &[Measurement]) -> usize {
    let mut cs: Vec<_> = meas.iter().map(|m| m.obs.constellation).collect();
    cs.sort();
    cs.dedup();
    cs.len()
}

/// Activates the scores and solves WLS, falling back to unit weights when the weighted problem is unsolvable.
pub fn position_epoch(
    measurements: &[Measurement],
    scores: &[f64],
    spec: &ActivationSpec,
    solver: &SolverConfig,
) -> Result<EpochPosition, ActivationError> {
    let min = crate::solver::minimum_measurements(distinct_constellations(measurements)).max(4);
    let wv = apply_activation(scores, spec, min)?;
    let start = StateVector::earth_center();
    if !wv.fallback {
        match solve_wls(measurements, &wv.weights, &start, solver) {
            Ok(sol) => {
                return Ok(EpochPosition {
                    solution: Some(sol),
                    weights: wv.weights,
                    fallback: false,
                })
            }
            Err(SolverError::Insufficient { .. } | SolverError::Singular { .. }) => {}
            Err(_) => {
                return Ok(EpochPosition {
                    solution: None,
                    weights: wv.weights,
                    fallback: false,
                })
            }
        }
    }
    Ok(EpochPosition {
        solution: solve_ols(measurements, &start, solver).ok(),
        weights: vec![1.0; measurements.len()],
        fallback: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub b: f64,
    /// None when no epoch was solved.
    pub rmse_3d_m: Option<f64>,
    pub epochs_used: usize,
    pub fallback_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// b is tuned on the evaluation epochs themselves.
    #[default]
    Test,
    /// b is tuned on a held-out validation split.
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best_b: f64,
    pub best_rmse_3d_m: f64,
    pub mode: SweepMode,
    pub curve: Vec<SweepPoint>,
}

/// Positions every epoch with the sigmoid at each b; smallest RMSE wins, ties to the smaller b.
pub fn sweep_sigmoid_b(
    epochs: &[ScoredEpoch],
    b_grid: &[f64],
    mode: SweepMode,
    solver: &SolverConfig,
) -> Result<SweepResult, ActivationError> {
    if b_grid.is_empty() {
        return Err(ActivationError::EmptyGrid);
    }
    for &b in b_grid {
        ActivationSpec::sigmoid(b).validate()?;
    }
    let curve: Vec<SweepPoint> = b_grid
        .par_iter()
        .map(|&b| {
            let spec = ActivationSpec::sigmoid(b);
            let mut errors = Vec::new();
            let mut fallback_count = 0;
            for e in epochs {
                let Ok(p) = position_epoch(&e.measurements, &e.scores, &spec, solver) else {
                    continue;
                };
                fallback_count += usize::from(p.fallback);
                if let Some(sol) = p.solution {
                    errors.push(error_3d(sol.position(), e.truth));
                }
            }
            SweepPoint {
                b,
                rmse_3d_m: rmse_3d(&errors).ok(),
                epochs_used: errors.len(),
                fallback_count,
            }
        })
        .collect();
    let best = curve
        .iter()
        .filter_map(|p| p.rmse_3d_m.map(|r| (r, p.b)))
        .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)))
        .ok_or(ActivationError::NothingSolved)?;
    Ok(SweepResult {
        best_b: best.1,
        best_rmse_3d_m: best.0,
        mode,
        curve,
    })
}

/// Integer grid `1..=200`.
pub fn default_b_grid() -> Vec<f64> {
    (1..=200).map(f64::from).collect()
}

pub fn write_sweep_csv<W: Write>(sink: W, curve: &[SweepPoint]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["b", "rmse_3d_m", "epochs_used", "fallback_count"])?;
    for p in curve {
        w.write_record([
            p.b.to_string(),
            p.rmse_3d_m.map(|r| r.to_string()).unwrap_or_default(),
            p.epochs_used.to_string(),
            p.fallback_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::tests::{eight_dirs, receiver, scene};
    use proptest::prelude::*;

    #[test]
    fn unit_step_mean_threshold() {
        let w = apply_activation(&[0.6, 0.4], &ActivationSpec::of(ActivationKind::UnitStep), 1).unwrap();
        assert_eq!(w.weights, vec![1.0, 0.0]);
        assert_eq!(w.threshold, Some(0.5));
        assert!(!w.fallback);
    }

    #[test]
    fn unit_step_lowers_threshold() {
        // Mean 0.34 passes one signal; 0.29 and 0.24 still pass one; 0.19 passes all five.
        let scores = [0.9, 0.2, 0.2, 0.2, 0.2];
        let w = apply_activation(&scores, &ActivationSpec::of(ActivationKind::UnitStep), 5).unwrap();
        assert_eq!(w.weights, vec![1.0; 5]);
        assert!((w.threshold.unwrap() - 0.19).abs() < 1e-12);
        assert!(!w.fallback);
        let w = apply_activation(&scores, &ActivationSpec::of(ActivationKind::UnitStep), 1).unwrap();
        assert_eq!(w.weights, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn unit_step_all_ones_fallback() {
        let w = apply_activation(&[0.9, 0.1, 0.5], &ActivationSpec::of(ActivationKind::UnitStep), 4).unwrap();
        assert!(w.fallback);
        assert_eq!(w.weights, vec![1.0; 3]);
    }

    #[test]
    fn relu_examples() {
        let w = apply_activation(&[0.4, 0.7, 1.0], &ActivationSpec::of(ActivationKind::Relu), 1).unwrap();
        assert_eq!(w.weights[0], 0.0);
        assert!((w.weights[1] - 0.5).abs() < 1e-15);
        assert_eq!(w.weights[2], 1.0);
        assert!((relu(0.7, 0.4) - 0.5).abs() < 1e-15);
        assert_eq!(relu(0.3, 1.0), 0.0);
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(0.3, 0.3, 7.0), 0.5);
        assert!((sigmoid(0.55, 0.5, 100.0) - 0.993_307_149_1).abs() < 1e-9);
        let w = apply_activation(&[0.2, 0.8], &ActivationSpec::sigmoid(10.0), 1).unwrap();
        assert_eq!(w.threshold, Some(0.5));
        assert!((w.weights[0] + w.weights[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_and_linear() {
        let s = [0.1, 0.9, 0.35];
        let c = apply_activation(&s, &ActivationSpec::of(ActivationKind::Constant), 1).unwrap();
        assert_eq!(c.weights, vec![1.0; 3]);
        let l = apply_activation(&s, &ActivationSpec::of(ActivationKind::Linear), 1).unwrap();
        assert_eq!(l.weights, s.to_vec());
    }

    #[test]
    fn input_errors() {
        assert_eq!(
            apply_activation(&[0.5], &ActivationSpec::sigmoid(0.0), 1),
            Err(ActivationError::Steepness(0.0))
        );
        assert_eq!(
            apply_activation(&[0.5], &ActivationSpec::sigmoid(-3.0), 1),
            Err(ActivationError::Steepness(-3.0))
        );
        assert_eq!(
            apply_activation(&[], &ActivationSpec::default(), 1),
            Err(ActivationError::Empty)
        );
        assert_eq!(
            apply_activation(&[1.5], &ActivationSpec::default(), 1),
            Err(ActivationError::Score(1.5))
        );
    }

    #[test]
    fn sigmoid_tends_to_step() {
        let a = 0.42;
        for k in 0..=1000 {
            let s = k as f64 / 1000.0;
            if (s - a).abs() <= 1e-4 {
                continue;
            }
            assert!((sigmoid(s, a, 1e6) - unit_step(s, a)).abs() < 1e-6, "s = {s}");
        }
    }

    #[test]
    fn constant_matches_ols() {
        let truth = receiver();
        let meas = scene(&eight_dirs(), &[(crate::gnss::Constellation::Gps, 1e5), (crate::gnss::Constellation::BeiDou, 7e4)]);
        let cfg = SolverConfig::default();
        let p = position_epoch(&meas, &[0.3; 8], &ActivationSpec::of(ActivationKind::Constant), &cfg).unwrap();
        let ols = solve_ols(&meas, &StateVector::earth_center(), &cfg).unwrap();
        assert!(p.solution.unwrap().position().distance(&ols.position()) < 1e-9);
        assert!(ols.position().distance(&truth) < 1e-3);
    }

    fn biased_epochs(n: usize) -> Vec<ScoredEpoch> {
        use crate::gnss::Constellation::{BeiDou, Gps};
        (0..n)
            .map(|i| {
                let mut meas = scene(&eight_dirs(), &[(Gps, 1e5), (BeiDou, 7e4)]);
                let k = i % 5;
                meas[k].obs.pseudorange += 200.0;
                let mut scores = vec![0.8; 8];
                scores[k] = 0.2;
                ScoredEpoch {
                    time: i as f64,
                    measurements: meas,
                    scores,
                    truth: receiver(),
                }
            })
            .collect()
    }

    #[test]
    fn sweep_prefers_steep_sigmoid_on_biased_signal() {
        let epochs = biased_epochs(5);
        let r = sweep_sigmoid_b(&epochs, &[1.0, 50.0, 200.0], SweepMode::Test, &SolverConfig::default()).unwrap();
        assert_eq!(r.curve.len(), 3);
        assert!(r.curve.iter().all(|p| p.rmse_3d_m.unwrap() >= 0.0 && p.epochs_used == 5));
        assert!(r.curve[2].rmse_3d_m.unwrap() < r.curve[0].rmse_3d_m.unwrap());
        assert!(r.best_b > 1.0);
    }

    #[test]
    fn sweep_singleton_and_empty_grid() {
        let epochs = biased_epochs(2);
        let r = sweep_sigmoid_b(&epochs, &[13.0], SweepMode::Validation, &SolverConfig::default()).unwrap();
        assert_eq!(r.best_b, 13.0);
        assert_eq!(r.mode, SweepMode::Validation);
        assert_eq!(
            sweep_sigmoid_b(&epochs, &[], SweepMode::Test, &SolverConfig::default()),
            Err(ActivationError::EmptyGrid)
        );
    }

    #[test]
    fn sweep_ties_go_to_smallest_b() {
        // Equal scores sit at the shift, so every b yields weights of 0.5 and the same RMSE.
        let mut epochs = biased_epochs(1);
        epochs[0].scores = vec![0.5; 8];
        let r = sweep_sigmoid_b(&epochs, &[9.0, 3.0, 5.0], SweepMode::Test, &SolverConfig::default()).unwrap();
        let rmses: Vec<f64> = r.curve.iter().map(|p| p.rmse_3d_m.unwrap()).collect();
        assert!(rmses.iter().all(|&x| x == rmses[0]));
        assert_eq!(r.best_b, 3.0);
    }

    #[test]
    fn sweep_csv_columns() {
        let curve = vec![SweepPoint {
            b: 2.0,
            rmse_3d_m: Some(1.5),
            epochs_used: 3,
            fallback_count: 0,
        }];
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &curve).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "b,rmse_3d_m,epochs_used,fallback_count\n2,1.5,3,0\n");
    }

    fn kinds() -> impl Strategy<Value = ActivationSpec> {
        (0usize..5, 0.1f64..500.0).prop_map(|(k, b)| ActivationSpec {
            kind: ActivationKind::ALL[k],
            shift: None,
            b,
        })
    }

    proptest! {
        #[test]
        fn weights_in_unit_interval(scores in proptest::collection::vec(0.0f64..=1.0, 1..20), spec in kinds(), min in 0usize..8) {
            let w = apply_activation(&scores, &spec, min).unwrap();
            prop_assert_eq!(w.weights.len(), scores.len());
            prop_assert!(w.weights.iter().all(|x| (0.0..=1.0).contains(x)));
        }

        #[test]
        fn relu_and_sigmoid_monotone(scores in proptest::collection::vec(0.0f64..=1.0, 2..20), b in 0.1f64..500.0) {
            for spec in [ActivationSpec::of(ActivationKind::Relu), ActivationSpec::sigmoid(b)] {
                let w = apply_activation(&scores, &spec, 1).unwrap();
                for i in 0..scores.len() {
                    for j in 0..scores.len() {
                        if scores[i] >= scores[j] {
                            prop_assert!(w.weights[i] >= w.weights[j]);
                        }
                    }
                }
            }
        }

        #[test]
        fn relu_unique_minimum_gets_single_zero(scores in proptest::collection::vec(0.0f64..0.99, 2..15)) {
            let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assume!(scores.iter().filter(|&&s| s == min).count() == 1);
            let w = apply_activation(&scores, &ActivationSpec::of(ActivationKind::Relu), 1).unwrap();
            prop_assert_eq!(w.weights.iter().filter(|&&x| x == 0.0).count(), 1);
        }
    }
}
