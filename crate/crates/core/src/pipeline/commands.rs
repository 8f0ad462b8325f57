//! Subcommands. Each stage reads its inputs from files and writes its outputs
//! to the configured output directory, so stages can be rerun independently.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SplitPaths};
use super::{
    best_set_rows, best_sets, build_report, feature_stream, labeled_samples, method_name, method_rows,
    pair_truth, scored_epochs, score_records, train_models, unsolved_rows, warn_failures, FeatureStream,
    PipelineError, TrainingSummary, BASELINE_METHOD, BEST_SET_METHOD,
};
use crate::activation::{sweep_sigmoid_b, write_sweep_csv, ActivationKind, ActivationSpec, ScoredEpoch, SweepMode, SweepResult};
use crate::ensemble::EnsembleModel;
use crate::ephemeris::EphemerisStore;
use crate::evaluation::{
    improvement_fraction, remaining_gap_fraction, weight_histogram, write_histogram_csv, EvalReport, MethodSummary,
};
use crate::geodesy::EcefPosition;
use crate::gnss::Constellation;
use crate::ingest::{
    assemble_epochs, group_epochs, parse_ground_truth, parse_rinex_nav, parse_rinex_obs, read_canonical_csv,
    write_canonical_csv, write_truth_ecef_csv, Corrections, EpochData, TruthFormat,
};
use crate::labeling::{read_labeled_csv, write_labeled_csv, BestSetResult};
use crate::synthetic::simulate;

pub const HISTOGRAM_BINS: usize = 20;

pub fn epochs_file(split: &str) -> String {
    format!("{split}_epochs.csv")
}

pub fn truth_file(split: &str) -> String {
    format!("{split}_truth.csv")
}

pub fn labeled_file(split: &str) -> String {
    format!("{split}_labeled.csv")
}

pub fn model_file(c: Constellation) -> String {
    format!("model_{}.json", c.as_str().to_ascii_lowercase())
}

fn out_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn open(path: &Path) -> Result<BufReader<File>, PipelineError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::Data(format!("{}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

fn with_path<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> PipelineError + '_ {
    move |e| PipelineError::Data(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(with_path(path))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn keep_constellations(epochs: Vec<EpochData>, selected: &[Constellation]) -> Vec<EpochData> {
    epochs
        .into_iter()
        .filter_map(|mut e| {
            e.measurements.retain(|m| selected.contains(&m.obs.constellation));
            (!e.measurements.is_empty()).then_some(e)
        })
        .collect()
}

/// Epochs of a split straight from its source files.
pub fn load_source_epochs(cfg: &ExperimentConfig, paths: &SplitPaths) -> Result<Vec<EpochData>, PipelineError> {
    let selected = cfg.selected();
    if let Some(path) = &paths.canonical {
        let records = read_canonical_csv(open(path)?).map_err(with_path(path))?;
        if records.is_empty() {
            return Err(PipelineError::Data(format!("{}: no observations", path.display())));
        }
        let epochs = group_epochs(&records).map_err(with_path(path))?;
        return Ok(keep_constellations(epochs, &selected));
    }
    let (Some(obs_path), Some(nav_path)) = (&paths.obs, &paths.nav) else {
        return Err(PipelineError::Config("split needs either `canonical` or both `obs` and `nav`".into()));
    };
    let obs = parse_rinex_obs(open(obs_path)?).map_err(with_path(obs_path))?;
    if obs.epochs.is_empty() {
        return Err(PipelineError::Data(format!("{}: no observation epochs", obs_path.display())));
    }
    for w in &obs.warnings {
        warn!("{}: line {}: {}", obs_path.display(), w.line, w.message);
    }
    let nav = parse_rinex_nav(open(nav_path)?).map_err(with_path(nav_path))?;
    for w in &nav.warnings {
        warn!("{}: line {}: {}", nav_path.display(), w.line, w.message);
    }
    let store = EphemerisStore::new(nav.records);
    let corrections = Corrections {
        ionosphere: if cfg.ingest.ionosphere { nav.klobuchar.as_ref() } else { None },
        troposphere: cfg.ingest.troposphere,
    };
    if cfg.ingest.ionosphere && nav.klobuchar.is_none() {
        warn!("{}: no ionosphere parameters, correction skipped", nav_path.display());
    }
    let assembled = assemble_epochs(&obs.epochs, &store, &selected, &cfg.ingest.ephemeris, corrections);
    if !assembled.skipped.is_empty() {
        warn!("{} signals had no usable ephemeris", assembled.skipped.len());
    }
    if assembled.epochs.is_empty() {
        return Err(PipelineError::Data(format!(
            "{}: no epoch has a signal of the selected constellations with ephemeris",
            obs_path.display()
        )));
    }
    Ok(assembled.epochs)
}

pub fn load_source_truth(paths: &SplitPaths) -> Result<Vec<(f64, EcefPosition)>, PipelineError> {
    let Some(path) = &paths.truth else {
        return Err(PipelineError::Config("split has no truth file".into()));
    };
    let format = paths.truth_format.unwrap_or(TruthFormat::CsvGeodetic);
    let points = parse_ground_truth(open(path)?, format).map_err(with_path(path))?;
    Ok(points.into_iter().map(|p| (p.time, p.ecef())).collect())
}

fn write_split(cfg: &ExperimentConfig, split: &str, epochs: &[EpochData], truth: &[(f64, EcefPosition)]) -> Result<(), PipelineError> {
    let path = out_path(cfg, &epochs_file(split));
    let mut w = create(&path)?;
    write_canonical_csv(&mut w, epochs).map_err(with_path(&path))?;
    w.flush()?;
    let path = out_path(cfg, &truth_file(split));
    let mut w = create(&path)?;
    write_truth_ecef_csv(&mut w, truth.iter().copied()).map_err(with_path(&path))?;
    w.flush()?;
    Ok(())
}

/// Converts a split's inputs into `<split>_epochs.csv` and `<split>_truth.csv`.
pub fn cmd_ingest(cfg: &ExperimentConfig, split: &str) -> Result<usize, PipelineError> {
    let paths = cfg.split(split)?;
    let epochs = load_source_epochs(cfg, paths)?;
    let truth = load_source_truth(paths)?;
    write_split(cfg, split, &epochs, &truth)?;
    let rows = epochs.iter().map(|e| e.measurements.len()).sum();
    info!("ingest {split}: {} epochs, {rows} signals", epochs.len());
    Ok(rows)
}

/// Writes simulated train, test and validation splits in ingested form.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    let selected = cfg.selected();
    for (split, scene) in [
        ("train", &cfg.simulate.train),
        ("test", &cfg.simulate.test),
        ("validation", &cfg.simulate.validation),
    ] {
        let scene = simulate(scene);
        let epochs = keep_constellations(scene.epochs, &selected);
        write_split(cfg, split, &epochs, &scene.truth)?;
        info!("simulate {split}: {} epochs", epochs.len());
    }
    Ok(())
}

/// Ingested epochs and truth of a split.
pub fn read_split(cfg: &ExperimentConfig, split: &str) -> Result<(Vec<EpochData>, Vec<(f64, EcefPosition)>), PipelineError> {
    let path = out_path(cfg, &epochs_file(split));
    let records = read_canonical_csv(open(&path)?).map_err(with_path(&path))?;
    let epochs = keep_constellations(group_epochs(&records).map_err(with_path(&path))?, &cfg.selected());
    if epochs.is_empty() {
        return Err(PipelineError::Data(format!("{}: no epochs", path.display())));
    }
    let tpath = out_path(cfg, &truth_file(split));
    let truth = parse_ground_truth(open(&tpath)?, TruthFormat::CsvEcef).map_err(with_path(&tpath))?;
    Ok((epochs, truth.into_iter().map(|p| (p.time, p.ecef())).collect()))
}

struct Prepared {
    features: FeatureStream,
    truth: Vec<Option<EcefPosition>>,
}

fn prepare(cfg: &ExperimentConfig, split: &str) -> Result<Prepared, PipelineError> {
    let (epochs, truth) = read_split(cfg, split)?;
    let features = feature_stream(&epochs, &cfg.features, &cfg.solver);
    warn_failures(split, &features.failed);
    let times: Vec<f64> = features.epochs.iter().map(|e| e.epoch.time).collect();
    let truth = pair_truth(&times, &truth, cfg.ingest.max_truth_gap_s);
    let unmatched = truth.iter().filter(|t| t.is_none()).count();
    if unmatched > 0 {
        warn!("{split}: {unmatched} epochs have no truth within {} s", cfg.ingest.max_truth_gap_s);
    }
    Ok(Prepared { features, truth })
}

/// Best-set labels for a split, written to `<split>_labeled.csv`.
pub fn cmd_label(cfg: &ExperimentConfig, split: &str) -> Result<usize, PipelineError> {
    let p = prepare(cfg, split)?;
    let best = best_sets(&p.features.epochs, &p.truth, &cfg.labeling, &cfg.solver);
    let samples = labeled_samples(&p.features.epochs, &best);
    let approx = best.iter().flatten().filter(|b| b.approx).count();
    if approx > 0 {
        info!("label {split}: {approx} epochs used the beam search");
    }
    let path = out_path(cfg, &labeled_file(split));
    let mut w = create(&path)?;
    write_labeled_csv(&mut w, &samples).map_err(with_path(&path))?;
    w.flush()?;
    Ok(samples.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub models: Vec<TrainingSummary>,
}

/// Fits one model per selected constellation from `train_labeled.csv`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainReport, PipelineError> {
    let path = out_path(cfg, &labeled_file("train"));
    let samples = read_labeled_csv(open(&path)?).map_err(with_path(&path))?;
    if samples.is_empty() {
        return Err(PipelineError::Data(format!("{}: no labeled samples", path.display())));
    }
    let (models, summaries) = train_models(&samples, &cfg.selected(), |c| cfg.model_config(c))?;
    for (c, model) in &models {
        let mpath = out_path(cfg, &model_file(*c));
        let mut w = create(&mpath)?;
        model.write(&mut w)?;
        w.flush()?;
    }
    let report = TrainReport {
        seed: cfg.seed,
        models: summaries,
    };
    write_json(&out_path(cfg, "train_report.json"), &report)?;
    Ok(report)
}

pub fn read_models(cfg: &ExperimentConfig) -> Result<BTreeMap<Constellation, EnsembleModel>, PipelineError> {
    let mut models = BTreeMap::new();
    for c in cfg.selected() {
        let path = out_path(cfg, &model_file(c));
        let model = EnsembleModel::read(open(&path)?).map_err(with_path(&path))?;
        if model.constellation.is_some_and(|m| m != c) {
            return Err(PipelineError::Data(format!("{}: model is for another constellation", path.display())));
        }
        models.insert(c, model);
    }
    Ok(models)
}

#[derive(Debug, Serialize)]
struct ScoreRow {
    epoch_time: f64,
    constellation: Constellation,
    svid: u16,
    ml_usable: bool,
    score: f64,
}

/// Scores every test signal into `test_scores.csv`.
pub fn cmd_predict(cfg: &ExperimentConfig) -> Result<usize, PipelineError> {
    let models = read_models(cfg)?;
    let p = prepare(cfg, "test")?;
    let path = out_path(cfg, "test_scores.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let mut n = 0;
    for e in &p.features.epochs {
        let scores = score_records(&e.records, &models)?;
        for (r, s) in e.records.iter().zip(scores) {
            w.serialize(ScoreRow {
                epoch_time: r.epoch_time,
                constellation: r.constellation,
                svid: r.svid,
                ml_usable: r.ml_usable,
                score: s,
            })
            .map_err(with_path(&path))?;
            n += 1;
        }
    }
    w.flush()?;
    Ok(n)
}

fn scored_split(cfg: &ExperimentConfig, split: &str, models: &BTreeMap<Constellation, EnsembleModel>) -> Result<(Prepared, Vec<ScoredEpoch>), PipelineError> {
    let p = prepare(cfg, split)?;
    let scored = scored_epochs(&p.features.epochs, &p.truth, models)?;
    if scored.is_empty() {
        return Err(PipelineError::Data(format!("{split}: no epoch has both features and truth")));
    }
    Ok((p, scored))
}

/// Evaluates the constant baseline, the configured activation and the best-set oracle on the test split.
pub fn cmd_position(cfg: &ExperimentConfig) -> Result<EvalReport, PipelineError> {
    let models = read_models(cfg)?;
    let (p, scored) = scored_split(cfg, "test", &models)?;
    let spec = cfg.activation;
    let chosen = method_name(&cfg.model_config(cfg.selected()[0]), &spec);

    let (mut rows, _, _) = method_rows(BASELINE_METHOD, &scored, &ActivationSpec::of(ActivationKind::Constant), &cfg.solver)?;
    let (chosen_rows, weights, fallbacks) = method_rows(&chosen, &scored, &spec, &cfg.solver)?;
    if fallbacks > 0 {
        warn!("{chosen}: {fallbacks} epochs fell back to unit weights");
    }
    rows.extend(chosen_rows);

    let best = best_sets(&p.features.epochs, &p.truth, &cfg.labeling, &cfg.solver);
    let by_time: BTreeMap<u64, BestSetResult> = p
        .features
        .epochs
        .iter()
        .zip(best)
        .filter_map(|(e, b)| b.map(|b| (e.epoch.time.to_bits(), b)))
        .collect();
    rows.extend(best_set_rows(&scored, &by_time));
    let failed: Vec<f64> = p.features.failed.iter().map(|f| f.0).collect();
    rows.extend(unsolved_rows(&failed, &[BASELINE_METHOD, chosen.as_str(), BEST_SET_METHOD]));

    let report = build_report(rows);
    let path = out_path(cfg, "report_rows.csv");
    let mut w = create(&path)?;
    report.write_rows_csv(&mut w)?;
    w.flush()?;
    let path = out_path(cfg, "report_summary.json");
    let mut w = create(&path)?;
    report.write_summary_json(&mut w)?;
    w.flush()?;
    let path = out_path(cfg, "weights_histogram.csv");
    let mut w = create(&path)?;
    write_histogram_csv(&mut w, &weight_histogram(&weights, HISTOGRAM_BINS))?;
    w.flush()?;
    Ok(report)
}

/// Sweeps the sigmoid steepness over the configured grid and writes `sweep.csv` and `sweep.json`.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<SweepResult, PipelineError> {
    let models = read_models(cfg)?;
    let split = match cfg.sweep.mode {
        SweepMode::Test => "test",
        SweepMode::Validation => "validation",
    };
    let (_, scored) = scored_split(cfg, split, &models)?;
    let result = sweep_sigmoid_b(&scored, &cfg.sweep.b_grid, cfg.sweep.mode, &cfg.solver)?;
    let path = out_path(cfg, "sweep.csv");
    let mut w = create(&path)?;
    write_sweep_csv(&mut w, &result.curve).map_err(with_path(&path))?;
    w.flush()?;
    write_json(&out_path(cfg, "sweep.json"), &result)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub rmse_3d_m: Option<f64>,
    pub availability_fraction: f64,
    /// Percent of the baseline-to-best-set gap closed.
    pub improvement_pct: Option<f64>,
    pub remaining_gap_pct: Option<f64>,
}

/// Method comparison from `report_summary.json`, written to `comparison.csv` and returned as text.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<String, PipelineError> {
    let path = out_path(cfg, "report_summary.json");
    let summary: BTreeMap<String, MethodSummary> = serde_json::from_reader(open(&path)?).map_err(with_path(&path))?;
    let baseline = summary.get(BASELINE_METHOD).and_then(|s| s.rmse_3d_m);
    let best = summary.get(BEST_SET_METHOD).and_then(|s| s.rmse_3d_m);
    let rows: Vec<ComparisonRow> = summary
        .iter()
        .map(|(m, s)| {
            let fraction = |f: fn(f64, f64, f64) -> Result<f64, _>| match (baseline, s.rmse_3d_m, best) {
                (Some(b), Some(r), Some(o)) if m != BASELINE_METHOD && m != BEST_SET_METHOD => f(b, r, o).ok(),
                _ => None,
            };
            ComparisonRow {
                method: m.clone(),
                rmse_3d_m: s.rmse_3d_m,
                availability_fraction: s.availability_fraction,
                improvement_pct: fraction(improvement_fraction),
                remaining_gap_pct: fraction(remaining_gap_fraction),
            }
        })
        .collect();

    let cpath = out_path(cfg, "comparison.csv");
    let mut w = csv::Writer::from_writer(create(&cpath)?);
    for r in &rows {
        w.serialize(r).map_err(with_path(&cpath))?;
    }
    w.flush()?;

    let opt = |v: Option<f64>, digits: usize| v.map_or("-".to_string(), |v| format!("{v:.digits$}"));
    let mut text = format!(
        "{:<28} {:>12} {:>8} {:>12} {:>10}\n",
        "method", "rmse_3d_m", "avail", "improve_%", "gap_%"
    );
    for r in &rows {
        text.push_str(&format!(
            "{:<28} {:>12} {:>8.3} {:>12} {:>10}\n",
            r.method,
            opt(r.rmse_3d_m, 3),
            r.availability_fraction,
            opt(r.improvement_pct, 1),
            opt(r.remaining_gap_pct, 1)
        ));
    }
    let spath = out_path(cfg, "sweep.json");
    if spath.exists() {
        let sweep: SweepResult = serde_json::from_reader(open(&spath)?).map_err(with_path(&spath))?;
        text.push_str(&format!(
            "sigmoid sweep ({:?}): b* = {} with rmse {:.3} m\n",
            sweep.mode, sweep.best_b, sweep.best_rmse_3d_m
        ));
    }
    Ok(text)
}

/// All stages on configured inputs, or on simulated splits when no inputs are configured.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<String, PipelineError> {
    let has_inputs = |s: &SplitPaths| s.canonical.is_some() || s.obs.is_some();
    if has_inputs(&cfg.train) && has_inputs(&cfg.test) {
        cmd_ingest(cfg, "train")?;
        cmd_ingest(cfg, "test")?;
        if cfg.sweep.mode == SweepMode::Validation {
            cmd_ingest(cfg, "validation")?;
        }
    } else {
        info!("no input files configured, using simulated splits");
        cmd_simulate(cfg)?;
    }
    cmd_label(cfg, "train")?;
    cmd_train(cfg)?;
    cmd_predict(cfg)?;
    cmd_position(cfg)?;
    cmd_sweep(cfg)?;
    cmd_report(cfg)
}
