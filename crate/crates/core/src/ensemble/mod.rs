//! Tree ensembles producing signal-quality scores in [0, 1].

mod adaboost;
mod forest;
mod gboost;
mod tree;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnss::Constellation;

pub use adaboost::{fit_adaboost, learner_weight, margin, AdaBoostConfig, MIN_ERROR_RATE};
pub use forest::{fit_random_forest, RandomForestConfig};
pub use gboost::{fit_gradient_boosting, log_loss, logistic, staged_log_loss, GradientBoostingConfig};
pub use tree::{fit_classification_tree, fit_regression_tree, TreeConfig, TreeNode};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("training set is empty")]
    Empty,
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("sample {index} has {found} features, expected {expected}")]
    Dimension { index: usize, expected: usize, found: usize },
    #[error("labels must be 0 or 1")]
    Label,
    #[error("sample weights must be finite, non-negative and sum to a positive value")]
    Weights,
    #[error("feature value at sample {0} is not finite")]
    NonFinite(usize),
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    #[default]
    Gini,
    Entropy,
}

/// Gini impurity of class proportions.
pub fn gini(p: &[f64]) -> f64 {
    p.iter().map(|pk| pk * (1.0 - pk)).sum()
}

/// Entropy in nats; `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&pk| pk > 0.0)
        .map(|pk| -pk * pk.ln())
        .sum::<f64>()
        .max(0.0)
}

/// Feature vectors with 0/1 labels and optional sample weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub weights: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<u8>) -> Self {
        Self {
            features,
            labels,
            weights: None,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), EnsembleError> {
        if self.is_empty() {
            return Err(EnsembleError::Empty);
        }
        if self.features.len() != self.labels.len() {
            return Err(EnsembleError::Dimension {
                index: self.features.len().min(self.labels.len()),
                expected: self.labels.len(),
                found: self.features.len(),
            });
        }
        let d = self.dimension();
        for (i, x) in self.features.iter().enumerate() {
            if x.len() != d {
                return Err(EnsembleError::Dimension {
                    index: i,
                    expected: d,
                    found: x.len(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(EnsembleError::NonFinite(i));
            }
        }
        if self.labels.iter().any(|&l| l > 1) {
            return Err(EnsembleError::Label);
        }
        if let Some(w) = &self.weights {
            if w.len() != self.len() || w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(EnsembleError::Weights);
            }
        }
        Ok(())
    }

    pub fn sample_weights(&self) -> Vec<f64> {
        self.weights.clone().unwrap_or_else(|| vec![1.0; self.len()])
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Samples reordered by feature bits, then label, then weight.
    pub fn canonical(&self) -> Dataset {
        let w = self.sample_weights();
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            let ka: Vec<u64> = self.features[a].iter().map(|v| v.to_bits()).collect();
            let kb: Vec<u64> = self.features[b].iter().map(|v| v.to_bits()).collect();
            ka.cmp(&kb)
                .then(self.labels[a].cmp(&self.labels[b]))
                .then(w[a].total_cmp(&w[b]))
        });
        Dataset {
            features: order.iter().map(|&i| self.features[i].clone()).collect(),
            labels: order.iter().map(|&i| self.labels[i]).collect(),
            weights: self.weights.as_ref().map(|w| order.iter().map(|&i| w[i]).collect()),
        }
    }

    pub(crate) fn label_f64(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| f64::from(l)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    RandomForest,
    AdaBoost,
    GradientBoosting,
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random_forest" => Ok(ModelKind::RandomForest),
            "adaboost" => Ok(ModelKind::AdaBoost),
            "gradient_boosting" => Ok(ModelKind::GradientBoosting),
            o => Err(format!("unknown model kind '{o}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    RandomForest(RandomForestConfig),
    AdaBoost(AdaBoostConfig),
    GradientBoosting(GradientBoostingConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::RandomForest(_) => ModelKind::RandomForest,
            ModelConfig::AdaBoost(_) => ModelKind::AdaBoost,
            ModelConfig::GradientBoosting(_) => ModelKind::GradientBoosting,
        }
    }

    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::RandomForest => ModelConfig::RandomForest(RandomForestConfig::default()),
            ModelKind::AdaBoost => ModelConfig::AdaBoost(AdaBoostConfig::default()),
            ModelKind::GradientBoosting => ModelConfig::GradientBoosting(GradientBoostingConfig::default()),
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            ModelConfig::RandomForest(c) => ModelConfig::RandomForest(RandomForestConfig { rng_seed: seed, ..c }),
            ModelConfig::AdaBoost(c) => ModelConfig::AdaBoost(AdaBoostConfig { rng_seed: seed, ..c }),
            ModelConfig::GradientBoosting(c) => {
                ModelConfig::GradientBoosting(GradientBoostingConfig { rng_seed: seed, ..c })
            }
        }
    }
}

/// A trained ensemble and everything needed to score new samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub format_version: u32,
    pub config: ModelConfig,
    pub feature_names: Vec<String>,
    pub constellation: Option<Constellation>,
    pub trees: Vec<TreeNode>,
    /// AdaBoost learner weights, one per tree.
    pub alphas: Vec<f64>,
    /// Gradient boosting initial log-odds.
    pub initial_score: f64,
    pub learning_rate: f64,
}

impl EnsembleModel {
    pub fn kind(&self) -> ModelKind {
        self.config.kind()
    }

    /// Score in [0, 1] for one feature vector.
    pub fn score(&self, x: &[f64]) -> f64 {
        match self.kind() {
            ModelKind::RandomForest => forest::score(self, x),
            ModelKind::AdaBoost => adaboost::score(self, x),
            ModelKind::GradientBoosting => gboost::score(self, x),
        }
    }

    pub fn scores(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        xs.iter().map(|x| self.score(x)).collect()
    }

    pub fn to_json(&self) -> Result<String, EnsembleError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, EnsembleError> {
        let m: EnsembleModel = serde_json::from_str(text)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(EnsembleError::Version(m.format_version));
        }
        Ok(m)
    }

    pub fn write<W: Write>(&self, mut sink: W) -> Result<(), EnsembleError> {
        sink.write_all(self.to_json()?.as_bytes())?;
        sink.write_all(b"\n")?;
        Ok(())
    }

    pub fn read<R: Read>(mut source: R) -> Result<Self, EnsembleError> {
        let mut text = String::new();
        source.read_to_string(&mut text)?;
        Self::from_json(&text)
    }

    /// FNV-1a hash of the serialized model.
    pub fn fingerprint(&self) -> u64 {
        let text = serde_json::to_string(self).unwrap_or_default();
        text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }

    pub(crate) fn empty(config: ModelConfig, feature_names: Vec<String>) -> Self {
        EnsembleModel {
            format_version: MODEL_FORMAT_VERSION,
            config,
            feature_names,
            constellation: None,
            trees: Vec::new(),
            alphas: Vec::new(),
            initial_score: 0.0,
            learning_rate: 0.0,
        }
    }
}

/// Default feature names `f0, f1, ...` for `d` columns.
pub fn generic_feature_names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("f{i}")).collect()
}

/// Trains the model described by `config`.
pub fn fit_model(data: &Dataset, config: &ModelConfig) -> Result<EnsembleModel, EnsembleError> {
    match config {
        ModelConfig::RandomForest(c) => fit_random_forest(data, c),
        ModelConfig::AdaBoost(c) => fit_adaboost(data, c),
        ModelConfig::GradientBoosting(c) => fit_gradient_boosting(data, c),
    }
}

pub const SCORE_THRESHOLD: f64 = 0.5;

/// Fraction of correct thresholded predictions over samples whose epoch has more than four signals.
///
/// `epoch_sizes[i]` is the signal count of sample `i`'s epoch. None if nothing is retained.
pub fn accuracy(scores: &[f64], labels: &[u8], epoch_sizes: &[usize]) -> Option<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for ((&s, &l), &n) in scores.iter().zip(labels).zip(epoch_sizes) {
        if n <= 4 {
            continue;
        }
        total += 1;
        if u8::from(s >= SCORE_THRESHOLD) == l {
            correct += 1;
        }
    }
    (total > 0).then(|| correct as f64 / total as f64)
}
