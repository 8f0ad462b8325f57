//! Gradient boosting on log loss with least-squares regression trees.

use serde::{Deserialize, Serialize};

use super::tree::{fit_regression_tree, TreeConfig};
use super::{generic_feature_names, Criterion, Dataset, EnsembleError, EnsembleModel, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradientBoostingConfig {
    pub n_iter: usize,
    pub learning_rate: f64,
    pub tree_depth: usize,
    pub min_leaf: usize,
    pub rng_seed: u64,
}

impl Default for GradientBoostingConfig {
    fn default() -> Self {
        Self {
            n_iter: 100,
            learning_rate: 0.1,
            tree_depth: 3,
            min_leaf: 1,
            rng_seed: 42,
        }
    }
}

pub fn logistic(phi: f64) -> f64 {
    if phi >= 0.0 {
        1.0 / (1.0 + (-phi).exp())
    } else {
        let e = phi.exp();
        e / (1.0 + e)
    }
}

/// Mean negative log likelihood of labels under log-odds `phi`.
pub fn log_loss(labels: &[u8], phi: &[f64]) -> f64 {
    let n = labels.len().max(1) as f64;
    labels
        .iter()
        .zip(phi)
        .map(|(&l, &b)| {
            // log(1 + e^b) computed without overflow.
            let softplus = if b > 0.0 { b + (-b).exp().ln_1p() } else { b.exp().ln_1p() };
            -f64::from(l) * b + softplus
        })
        .sum::<f64>()
        / n
}

pub fn fit_gradient_boosting(data: &Dataset, cfg: &GradientBoostingConfig) -> Result<EnsembleModel, EnsembleError> {
    data.validate()?;
    let data = data.canonical();
    let n = data.len();
    let pos = data.positives();
    if pos == 0 || pos == n {
        return Err(EnsembleError::SingleClass);
    }
    let phi0 = (pos as f64 / (n - pos) as f64).ln();
    let y = data.label_f64();
    let w = data.sample_weights();
    let idx: Vec<usize> = (0..n).collect();
    let tcfg = TreeConfig {
        max_depth: cfg.tree_depth,
        min_leaf: cfg.min_leaf,
        criterion: Criterion::Gini,
        feature_subset_size: None,
        rng_seed: cfg.rng_seed,
    };

    let mut model = EnsembleModel::empty(
        ModelConfig::GradientBoosting(*cfg),
        generic_feature_names(data.dimension()),
    );
    model.initial_score = phi0;
    model.learning_rate = cfg.learning_rate;
    let mut phi = vec![phi0; n];
    for _ in 0..cfg.n_iter {
        let residual: Vec<f64> = (0..n).map(|i| y[i] - logistic(phi[i])).collect();
        let tree = fit_regression_tree(&data.features, &residual, &w, &idx, &tcfg);
        for (p, x) in phi.iter_mut().zip(&data.features) {
            *p += cfg.learning_rate * tree.predict(x);
        }
        model.trees.push(tree);
    }
    Ok(model)
}

pub(super) fn log_odds(model: &EnsembleModel, x: &[f64]) -> f64 {
    model.initial_score
        + model
            .trees
            .iter()
            .map(|t| model.learning_rate * t.predict(x))
            .sum::<f64>()
}

pub(super) fn score(model: &EnsembleModel, x: &[f64]) -> f64 {
    logistic(log_odds(model, x))
}

/// Training log loss after 0, 1, ..., M trees.
pub fn staged_log_loss(model: &EnsembleModel, data: &Dataset) -> Vec<f64> {
    let mut phi = vec![model.initial_score; data.len()];
    let mut out = vec![log_loss(&data.labels, &phi)];
    for t in &model.trees {
        for (p, x) in phi.iter_mut().zip(&data.features) {
            *p += model.learning_rate * t.predict(x);
        }
        out.push(log_loss(&data.labels, &phi));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::tests::separable;
    use super::super::TreeNode;
    use super::*;

    #[test]
    fn initial_log_odds() {
        let balanced = Dataset::new((0..10).map(|i| vec![i as f64]).collect(), (0..10).map(|i| (i % 2) as u8).collect());
        let m = fit_gradient_boosting(&balanced, &GradientBoostingConfig { n_iter: 0, ..Default::default() }).unwrap();
        assert_eq!(m.initial_score, 0.0);
        let nine = Dataset::new((0..10).map(|i| vec![i as f64]).collect(), (0..10).map(|i| u8::from(i > 0)).collect());
        let m = fit_gradient_boosting(&nine, &GradientBoostingConfig { n_iter: 0, ..Default::default() }).unwrap();
        assert_eq!(m.initial_score, 9f64.ln());
        assert!((m.score(&[3.0]) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn pseudo_residual_and_logistic() {
        assert!((1.0 - logistic(1.0) - 0.268_941_421_4).abs() < 1e-9);
        assert_eq!(logistic(0.0), 0.5);
        assert!((logistic(9f64.ln()) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn single_class_is_an_error() {
        let d = Dataset::new(vec![vec![0.0], vec![1.0]], vec![1, 1]);
        assert!(matches!(fit_gradient_boosting(&d, &GradientBoostingConfig::default()), Err(EnsembleError::SingleClass)));
    }

    #[test]
    fn two_iteration_hand_trace() {
        // x: 0,1,2,3 with labels 0,0,1,1 (after canonical sort, same order).
        let d = Dataset::new(vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]], vec![0, 0, 1, 1]);
        let cfg = GradientBoostingConfig { n_iter: 2, learning_rate: 0.5, tree_depth: 1, ..Default::default() };
        let m = fit_gradient_boosting(&d, &cfg).unwrap();
        // Phi0 = 0, residuals -0.5,-0.5,0.5,0.5 -> stump at 1.5 with leaves -0.5/+0.5.
        assert_eq!(m.initial_score, 0.0);
        match &m.trees[0] {
            TreeNode::Split { threshold, left, right, .. } => {
                assert_eq!(*threshold, 1.5);
                assert_eq!(**left, TreeNode::Leaf { value: -0.5 });
                assert_eq!(**right, TreeNode::Leaf { value: 0.5 });
            }
            other => panic!("expected a split, got {other:?}"),
        }
        // Phi1 = -/+0.25; residual magnitude 1 - logistic(0.25).
        let r = 1.0 - logistic(0.25);
        match &m.trees[1] {
            TreeNode::Split { left, right, .. } => {
                assert!((left.predict(&[0.0]) + r).abs() < 1e-15);
                assert!((right.predict(&[0.0]) - r).abs() < 1e-15);
            }
            other => panic!("expected a split, got {other:?}"),
        }
        let phi = 0.25 + 0.5 * r;
        assert!((m.score(&[3.0]) - logistic(phi)).abs() < 1e-15);
        assert!((m.score(&[0.0]) - logistic(-phi)).abs() < 1e-15);
    }

    #[test]
    fn training_loss_non_increasing() {
        for seed in [1, 2, 3] {
            let mut d = separable(400, seed);
            // Flip a few labels so the fit cannot become perfect immediately.
            for i in (0..d.len()).step_by(17) {
                d.labels[i] ^= 1;
            }
            let m = fit_gradient_boosting(&d, &GradientBoostingConfig::default()).unwrap();
            let c = d.canonical();
            let losses = staged_log_loss(&m, &c);
            assert_eq!(losses.len(), 101);
            for w in losses.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
            }
        }
    }
}
