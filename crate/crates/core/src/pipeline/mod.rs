//! Experiment stages: features, labels, models, scores and per-method reports.

pub mod commands;
pub mod config;

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use crate::activation::{position_epoch, ActivationError, ActivationSpec, ScoredEpoch};
use crate::ensemble::{accuracy, fit_model, Dataset, EnsembleError, EnsembleModel, ModelConfig};
use crate::evaluation::{error_3d, EvalError, EvalReport, EvalRow};
use crate::features::{extract_features, EpochFeatures, FeatureConfig, FeatureRecord, FEATURE_NAMES};
use crate::geodesy::EcefPosition;
use crate::gnss::Constellation;
use crate::ingest::{match_times, EpochData, IngestError};
use crate::labeling::{assign_labels, label_epoch, BestSetResult, LabeledSample, LabelingLimits};
use crate::solver::{SolverConfig, SolverError};

pub use config::ExperimentConfig;

/// Failure of a pipeline stage, grouped by exit code.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) => 3,
            PipelineError::Numerical(_) => 4,
        }
    }
}

impl From<IngestError> for PipelineError {
    fn from(e: IngestError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(e) => PipelineError::Data(e.to_string()),
            other => PipelineError::Numerical(other.to_string()),
        }
    }
}

impl From<EnsembleError> for PipelineError {
    fn from(e: EnsembleError) -> Self {
        match e {
            EnsembleError::Io(_) | EnsembleError::Json(_) | EnsembleError::Version(_) => {
                PipelineError::Data(e.to_string())
            }
            other => PipelineError::Numerical(other.to_string()),
        }
    }
}

impl From<ActivationError> for PipelineError {
    fn from(e: ActivationError) -> Self {
        match e {
            ActivationError::NothingSolved | ActivationError::Score(_) => PipelineError::Numerical(e.to_string()),
            other => PipelineError::Config(other.to_string()),
        }
    }
}

/// Feature records for each epoch that could be solved, plus the epochs that could not.
#[derive(Debug, Clone, Default)]
pub struct FeatureStream {
    pub epochs: Vec<EpochFeatures>,
    pub failed: Vec<(f64, SolverError)>,
}

pub fn feature_stream(epochs: &[EpochData], cfg: &FeatureConfig, solver: &SolverConfig) -> FeatureStream {
    let mut out = FeatureStream::default();
    for (e, r) in epochs.iter().zip(extract_features(epochs, cfg, solver)) {
        match r {
            Ok(f) => out.epochs.push(f),
            Err(err) => out.failed.push((e.time, err)),
        }
    }
    out
}

/// Truth position for each time, matched within `max_gap` seconds.
pub fn pair_truth(times: &[f64], truth: &[(f64, EcefPosition)], max_gap: f64) -> Vec<Option<EcefPosition>> {
    let truth_times: Vec<f64> = truth.iter().map(|t| t.0).collect();
    match_times(times, &truth_times, max_gap)
        .into_iter()
        .map(|m| m.map(|j| truth[j].1))
        .collect()
}

/// Best-set search for every epoch that has a truth position.
pub fn best_sets(
    epochs: &[EpochFeatures],
    truth: &[Option<EcefPosition>],
    limits: &LabelingLimits,
    solver: &SolverConfig,
) -> Vec<Option<BestSetResult>> {
    epochs
        .par_iter()
        .zip(truth.par_iter())
        .map(|(e, t)| {
            let t = (*t)?;
            label_epoch(e.measurements(), t, limits, solver).ok()
        })
        .collect()
}

/// Labeled samples from epochs with more than four signals.
pub fn labeled_samples(epochs: &[EpochFeatures], best: &[Option<BestSetResult>]) -> Vec<LabeledSample> {
    epochs
        .iter()
        .zip(best)
        .filter(|(e, _)| e.records.len() > 4)
        .flat_map(|(e, b)| assign_labels(b.as_ref(), &e.records))
        .collect()
}

/// Model inputs and labels of one constellation; records flagged unusable are left out.
pub fn training_set(samples: &[LabeledSample], constellation: Constellation) -> Dataset {
    let rows: Vec<&LabeledSample> = samples
        .iter()
        .filter(|s| s.record.constellation == constellation && s.record.ml_usable)
        .collect();
    Dataset::new(
        rows.iter().map(|s| s.record.feature_vector().to_vec()).collect(),
        rows.iter().map(|s| s.label).collect(),
    )
}

/// Per-sample epoch sizes for the accuracy metric.
pub fn epoch_sizes(samples: &[LabeledSample]) -> Vec<usize> {
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for s in samples {
        *counts.entry(s.record.epoch_time.to_bits()).or_default() += 1;
    }
    samples.iter().map(|s| counts[&s.record.epoch_time.to_bits()]).collect()
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainingSummary {
    pub constellation: Constellation,
    pub samples: usize,
    pub positives: usize,
    pub accuracy: Option<f64>,
    pub fingerprint: String,
}

/// One model per constellation, each trained only on that constellation's samples.
pub fn train_models(
    samples: &[LabeledSample],
    constellations: &[Constellation],
    model_for: impl Fn(Constellation) -> ModelConfig,
) -> Result<(BTreeMap<Constellation, EnsembleModel>, Vec<TrainingSummary>), PipelineError> {
    let mut models = BTreeMap::new();
    let mut summaries = Vec::new();
    for &c in constellations {
        let data = training_set(samples, c);
        if data.is_empty() {
            return Err(PipelineError::Data(format!("no {c} training samples")));
        }
        let positives = data.positives();
        if positives == 0 || positives == data.len() {
            return Err(PipelineError::Data(format!("{c} training labels contain a single class")));
        }
        let mut model = fit_model(&data, &model_for(c))?;
        model.constellation = Some(c);
        model.feature_names = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
        let acc = training_accuracy(&model, samples, c);
        summaries.push(TrainingSummary {
            constellation: c,
            samples: data.len(),
            positives: data.positives(),
            accuracy: acc,
            fingerprint: format!("{:016x}", model.fingerprint()),
        });
        models.insert(c, model);
    }
    Ok((models, summaries))
}

/// Accuracy of `model` on the usable samples of constellation `c`.
pub fn training_accuracy(model: &EnsembleModel, samples: &[LabeledSample], c: Constellation) -> Option<f64> {
    let sizes = epoch_sizes(samples);
    let (mut scores, mut labels, mut n) = (Vec::new(), Vec::new(), Vec::new());
    for (s, &size) in samples.iter().zip(&sizes) {
        if s.record.constellation == c && s.record.ml_usable {
            scores.push(model.score(&s.record.feature_vector()));
            labels.push(s.label);
            n.push(size);
        }
    }
    accuracy(&scores, &labels, &n)
}

/// Scores for one epoch's records. Records flagged unusable get the mean of the others (0.5 if none).
pub fn score_records(
    records: &[FeatureRecord],
    models: &BTreeMap<Constellation, EnsembleModel>,
) -> Result<Vec<f64>, PipelineError> {
    let mut scores: Vec<Option<f64>> = Vec::with_capacity(records.len());
    for r in records {
        let model = models
            .get(&r.constellation)
            .ok_or_else(|| PipelineError::Config(format!("no model for {}", r.constellation)))?;
        scores.push(r.ml_usable.then(|| model.score(&r.feature_vector())));
    }
    let known: Vec<f64> = scores.iter().flatten().copied().collect();
    let fill = if known.is_empty() {
        0.5
    } else {
        known.iter().sum::<f64>() / known.len() as f64
    };
    Ok(scores.into_iter().map(|s| s.unwrap_or(fill)).collect())
}

/// Scored epochs for every feature epoch that has a truth position.
pub fn scored_epochs(
    epochs: &[EpochFeatures],
    truth: &[Option<EcefPosition>],
    models: &BTreeMap<Constellation, EnsembleModel>,
) -> Result<Vec<ScoredEpoch>, PipelineError> {
    let mut out = Vec::new();
    for (e, t) in epochs.iter().zip(truth) {
        let Some(t) = t else { continue };
        out.push(ScoredEpoch {
            time: e.epoch.time,
            measurements: e.epoch.measurements.clone(),
            scores: score_records(&e.records, models)?,
            truth: *t,
        });
    }
    Ok(out)
}

pub const BASELINE_METHOD: &str = "constant";
pub const BEST_SET_METHOD: &str = "best_set";

/// Rows for one activation over the scored epochs, plus the weights used.
pub fn method_rows(
    method: &str,
    epochs: &[ScoredEpoch],
    spec: &ActivationSpec,
    solver: &SolverConfig,
) -> Result<(Vec<EvalRow>, Vec<f64>, usize), PipelineError> {
    spec.validate()?;
    let results: Vec<_> = epochs
        .par_iter()
        .map(|e| position_epoch(&e.measurements, &e.scores, spec, solver))
        .collect();
    let mut rows = Vec::with_capacity(epochs.len());
    let mut weights = Vec::new();
    let mut fallbacks = 0;
    for (e, r) in epochs.iter().zip(results) {
        let p = r?;
        fallbacks += usize::from(p.fallback);
        weights.extend_from_slice(&p.weights);
        let solution = p.solution.filter(|s| s.converged);
        rows.push(EvalRow {
            time: e.time,
            method: method.to_string(),
            error_3d_m: solution.as_ref().map(|s| error_3d(s.position(), e.truth)),
            n_signals: e.measurements.len(),
            solved: solution.is_some(),
        });
    }
    Ok((rows, weights, fallbacks))
}

/// Best-set oracle rows aligned with the scored epochs.
pub fn best_set_rows(epochs: &[ScoredEpoch], best: &BTreeMap<u64, BestSetResult>) -> Vec<EvalRow> {
    epochs
        .iter()
        .map(|e| {
            let b = best.get(&e.time.to_bits());
            EvalRow {
                time: e.time,
                method: BEST_SET_METHOD.to_string(),
                error_3d_m: b.map(|b| b.error_3d),
                n_signals: b.map_or(e.measurements.len(), |b| b.chosen.len()),
                solved: b.is_some(),
            }
        })
        .collect()
}

/// Rows for epochs that failed before scoring: unsolved for every method.
pub fn unsolved_rows(times: &[f64], methods: &[&str]) -> Vec<EvalRow> {
    methods
        .iter()
        .flat_map(|m| {
            times.iter().map(move |&t| EvalRow {
                time: t,
                method: m.to_string(),
                error_3d_m: None,
                n_signals: 0,
                solved: false,
            })
        })
        .collect()
}

/// Method label such as `adaboost_sigmoid`.
pub fn method_name(model: &ModelConfig, spec: &ActivationSpec) -> String {
    let kind = match model.kind() {
        crate::ensemble::ModelKind::RandomForest => "random_forest",
        crate::ensemble::ModelKind::AdaBoost => "adaboost",
        crate::ensemble::ModelKind::GradientBoosting => "gradient_boosting",
    };
    format!("{kind}_{}", spec.kind)
}

/// Sorts rows by method then time so reports do not depend on evaluation order.
pub fn build_report(mut rows: Vec<EvalRow>) -> EvalReport {
    rows.sort_by(|a, b| a.method.cmp(&b.method).then(a.time.total_cmp(&b.time)));
    EvalReport::from_rows(rows)
}

pub(crate) fn warn_failures(stage: &str, failed: &[(f64, SolverError)]) {
    if !failed.is_empty() {
        warn!("{stage}: {} epochs could not be solved", failed.len());
    }
}
