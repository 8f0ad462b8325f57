//! TOML experiment configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::activation::{default_b_grid, ActivationSpec, SweepMode};
use crate::ensemble::{AdaBoostConfig, GradientBoostingConfig, ModelConfig, ModelKind, RandomForestConfig};
use crate::ephemeris::EphemerisOptions;
use crate::features::FeatureConfig;
use crate::gnss::Constellation;
use crate::ingest::{TruthFormat, DEFAULT_MAX_GAP_S};
use crate::labeling::LabelingLimits;
use crate::solver::SolverConfig;
use crate::synthetic::SceneConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstellationSelection {
    Gps,
    Beidou,
    #[default]
    Both,
}

impl ConstellationSelection {
    pub fn constellations(self) -> Vec<Constellation> {
        match self {
            ConstellationSelection::Gps => vec![Constellation::Gps],
            ConstellationSelection::Beidou => vec![Constellation::BeiDou],
            ConstellationSelection::Both => Constellation::ALL.to_vec(),
        }
    }
}

impl FromStr for ConstellationSelection {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gps" => Ok(ConstellationSelection::Gps),
            "beidou" | "bds" => Ok(ConstellationSelection::Beidou),
            "both" => Ok(ConstellationSelection::Both),
            o => Err(format!("unknown constellation selection '{o}'")),
        }
    }
}

/// Input files of one split. Either `canonical` or both `obs` and `nav` must be given.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitPaths {
    pub obs: Option<PathBuf>,
    pub nav: Option<PathBuf>,
    /// Canonical epoch CSV used instead of RINEX.
    pub canonical: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub truth_format: Option<TruthFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSettings {
    pub ephemeris: EphemerisOptions,
    pub ionosphere: bool,
    pub troposphere: bool,
    /// Largest epoch-to-truth time difference accepted when pairing (s).
    pub max_truth_gap_s: f64,
}

impl Default for IngestSettings {
    fn default() -> Self {
        Self {
            ephemeris: EphemerisOptions::default(),
            ionosphere: false,
            troposphere: false,
            max_truth_gap_s: DEFAULT_MAX_GAP_S,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub kind: ModelKind,
    pub random_forest: RandomForestConfig,
    pub adaboost: AdaBoostConfig,
    pub gradient_boosting: GradientBoostingConfig,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            kind: ModelKind::AdaBoost,
            random_forest: RandomForestConfig::default(),
            adaboost: AdaBoostConfig::default(),
            gradient_boosting: GradientBoostingConfig::default(),
        }
    }
}

impl ModelSettings {
    pub fn config(&self, seed: u64) -> ModelConfig {
        match self.kind {
            ModelKind::RandomForest => ModelConfig::RandomForest(self.random_forest),
            ModelKind::AdaBoost => ModelConfig::AdaBoost(self.adaboost),
            ModelKind::GradientBoosting => ModelConfig::GradientBoosting(self.gradient_boosting),
        }
        .with_seed(seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub b_grid: Vec<f64>,
    pub mode: SweepMode,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            b_grid: default_b_grid(),
            mode: SweepMode::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSettings {
    pub train: SceneConfig,
    pub test: SceneConfig,
    pub validation: SceneConfig,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        let base = SceneConfig::default();
        Self {
            train: SceneConfig { epochs: 1000, seed: 1, ..base },
            test: SceneConfig {
                epochs: 500,
                seed: 2,
                start_time: base.start_time + 100_000.0,
                ..base
            },
            validation: SceneConfig {
                epochs: 300,
                seed: 3,
                start_time: base.start_time + 200_000.0,
                ..base
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub constellations: ConstellationSelection,
    pub train: SplitPaths,
    pub test: SplitPaths,
    pub validation: SplitPaths,
    pub ingest: IngestSettings,
    pub features: FeatureConfig,
    pub solver: SolverConfig,
    pub labeling: LabelingLimits,
    pub model: ModelSettings,
    /// Per-constellation replacements for `model`.
    pub model_overrides: BTreeMap<Constellation, ModelSettings>,
    pub activation: ActivationSpec,
    pub sweep: SweepSettings,
    pub simulate: SimulateSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            output_dir: PathBuf::from("out"),
            constellations: ConstellationSelection::Both,
            train: SplitPaths::default(),
            test: SplitPaths::default(),
            validation: SplitPaths::default(),
            ingest: IngestSettings::default(),
            features: FeatureConfig::default(),
            solver: SolverConfig::default(),
            labeling: LabelingLimits::default(),
            model: ModelSettings::default(),
            model_overrides: BTreeMap::new(),
            activation: ActivationSpec::default(),
            sweep: SweepSettings::default(),
            simulate: SimulateSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_relative(dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for split in [&mut self.train, &mut self.test, &mut self.validation] {
            for p in [&mut split.obs, &mut split.nav, &mut split.canonical, &mut split.truth]
                .into_iter()
                .flatten()
            {
                fix(p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.activation
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.sweep.b_grid.is_empty() {
            return Err(PipelineError::Config("sweep.b_grid is empty".into()));
        }
        if let Some(b) = self.sweep.b_grid.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return Err(PipelineError::Config(format!("sweep.b_grid contains {b}")));
        }
        let s = &self.solver;
        if !(s.tol_m > 0.0) || s.max_iter == 0 || !(s.weight_floor >= 0.0) || !(s.condition_limit > 1.0) {
            return Err(PipelineError::Config("solver settings out of range".into()));
        }
        if self.labeling.enumeration_cap >= 64 || self.labeling.beam_width == 0 {
            return Err(PipelineError::Config("labeling caps out of range".into()));
        }
        for scene in [&self.simulate.train, &self.simulate.test, &self.simulate.validation] {
            if scene.nlos_min > scene.nlos_max || scene.min_visible > scene.max_visible || scene.epochs == 0 {
                return Err(PipelineError::Config("simulate scene bounds out of order".into()));
            }
        }
        Ok(())
    }

    pub fn selected(&self) -> Vec<Constellation> {
        self.constellations.constellations()
    }

    pub fn model_settings(&self, c: Constellation) -> ModelSettings {
        self.model_overrides.get(&c).copied().unwrap_or(self.model)
    }

    pub fn model_config(&self, c: Constellation) -> ModelConfig {
        self.model_settings(c).config(self.seed)
    }

    pub fn split(&self, name: &str) -> Result<&SplitPaths, PipelineError> {
        match name {
            "train" => Ok(&self.train),
            "test" => Ok(&self.test),
            "validation" => Ok(&self.validation),
            o => Err(PipelineError::Config(format!("unknown split '{o}'"))),
        }
    }
}
