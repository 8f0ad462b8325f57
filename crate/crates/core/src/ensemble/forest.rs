//! Bagged trees with per-split random feature subsets, aggregated by soft voting.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{fit_classification_tree, tree_rng, TreeConfig};
use super::{generic_feature_names, Criterion, Dataset, EnsembleError, EnsembleModel, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features drawn per split; `None` uses all.
    pub feature_subset_size: Option<usize>,
    pub criterion: Criterion,
    pub bootstrap: bool,
    pub rng_seed: u64,
}

impl Default for RandomForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 8,
            min_leaf: 1,
            feature_subset_size: Some(3),
            criterion: Criterion::Gini,
            bootstrap: true,
            rng_seed: 42,
        }
    }
}

pub fn fit_random_forest(data: &Dataset, cfg: &RandomForestConfig) -> Result<EnsembleModel, EnsembleError> {
    data.validate()?;
    let data = data.canonical();
    let n = data.len();
    let y = data.label_f64();
    let w = data.sample_weights();
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(cfg.rng_seed, t);
            let idx: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let tcfg = TreeConfig {
                max_depth: cfg.max_depth,
                min_leaf: cfg.min_leaf,
                criterion: cfg.criterion,
                feature_subset_size: cfg.feature_subset_size,
                rng_seed: rng.gen(),
            };
            fit_classification_tree(&data.features, &y, &w, &idx, &tcfg)
        })
        .collect();
    let mut model = EnsembleModel::empty(
        ModelConfig::RandomForest(*cfg),
        generic_feature_names(data.dimension()),
    );
    model.trees = trees;
    Ok(model)
}

/// Mean class-1 proportion over the trees.
pub(super) fn score(model: &EnsembleModel, x: &[f64]) -> f64 {
    if model.trees.is_empty() {
        return 0.5;
    }
    let s = model.trees.iter().map(|t| t.predict(x)).sum::<f64>() / model.trees.len() as f64;
    s.clamp(0.0, 1.0)
}
