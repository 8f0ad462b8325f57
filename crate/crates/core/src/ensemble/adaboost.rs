//! Discrete AdaBoost with shallow trees; the score is the weighted share of +1 votes.

use serde::{Deserialize, Serialize};

use super::tree::{fit_classification_tree, TreeConfig, TreeNode};
use super::{generic_feature_names, Criterion, Dataset, EnsembleError, EnsembleModel, ModelConfig};

/// Error rate floor used when a learner classifies every sample correctly.
pub const MIN_ERROR_RATE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaBoostConfig {
    pub n_learners: usize,
    pub learning_rate: f64,
    pub stump_depth: usize,
    pub rng_seed: u64,
}

impl Default for AdaBoostConfig {
    fn default() -> Self {
        Self {
            n_learners: 100,
            learning_rate: 0.5,
            stump_depth: 1,
            rng_seed: 42,
        }
    }
}

/// Learner weight `eta * ln((1 - eps) / eps)`.
pub fn learner_weight(eps: f64, learning_rate: f64) -> f64 {
    learning_rate * ((1.0 - eps) / eps).ln()
}

fn vote(tree: &TreeNode, x: &[f64]) -> f64 {
    if tree.predict(x) >= 0.5 {
        1.0
    } else {
        -1.0
    }
}

pub fn fit_adaboost(data: &Dataset, cfg: &AdaBoostConfig) -> Result<EnsembleModel, EnsembleError> {
    data.validate()?;
    let data = data.canonical();
    let n = data.len();
    let y = data.label_f64();
    let signs: Vec<f64> = data.labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
    let mut w = match &data.weights {
        Some(w) => {
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect()
        }
        None => vec![1.0 / n as f64; n],
    };
    let idx: Vec<usize> = (0..n).collect();
    let tcfg = TreeConfig {
        max_depth: cfg.stump_depth.max(1),
        min_leaf: 1,
        criterion: Criterion::Gini,
        feature_subset_size: None,
        rng_seed: cfg.rng_seed,
    };

    let mut model = EnsembleModel::empty(ModelConfig::AdaBoost(*cfg), generic_feature_names(data.dimension()));
    model.learning_rate = cfg.learning_rate;
    for _ in 0..cfg.n_learners {
        let tree = fit_classification_tree(&data.features, &y, &w, &idx, &tcfg);
        let votes: Vec<f64> = data.features.iter().map(|x| vote(&tree, x)).collect();
        let total: f64 = w.iter().sum();
        let wrong: f64 = (0..n).filter(|&i| votes[i] != signs[i]).map(|i| w[i]).sum();
        let eps = wrong / total;
        if eps >= 0.5 {
            break;
        }
        let perfect = eps <= 0.0;
        let alpha = learner_weight(eps.max(MIN_ERROR_RATE), cfg.learning_rate);
        model.trees.push(tree);
        model.alphas.push(alpha);
        if perfect {
            break;
        }
        for i in 0..n {
            let s = if votes[i] == signs[i] { -alpha } else { alpha };
            w[i] *= s.exp();
        }
        let z: f64 = w.iter().sum();
        for v in &mut w {
            *v /= z;
        }
    }
    Ok(model)
}

/// Weighted share of learners voting +1; 0.5 for a model without learners.
pub(super) fn score(model: &EnsembleModel, x: &[f64]) -> f64 {
    let total: f64 = model.alphas.iter().sum();
    if model.trees.is_empty() || !(total > 0.0) {
        return 0.5;
    }
    let positive: f64 = model
        .trees
        .iter()
        .zip(&model.alphas)
        .filter(|(t, _)| vote(t, x) > 0.0)
        .map(|(_, a)| a)
        .sum();
    (positive / total).clamp(0.0, 1.0)
}

/// Signed margin `sum(alpha * vote)`.
pub fn margin(model: &EnsembleModel, x: &[f64]) -> f64 {
    model.trees.iter().zip(&model.alphas).map(|(t, a)| a * vote(t, x)).sum()
}

#[cfg(test)]
mod tests {
    use super::super::tests::separable;
    use super::*;

    #[test]
    fn weight_formula() {
        assert!((learner_weight(0.1, 1.0) - 9f64.ln()).abs() < 1e-15);
        assert!((learner_weight(0.1, 1.0) - 2.197_224_577).abs() < 1e-9);
        assert_eq!(learner_weight(0.5, 1.0), 0.0);
    }

    #[test]
    fn vote_share_examples() {
        let mut m = EnsembleModel::empty(ModelConfig::AdaBoost(AdaBoostConfig::default()), generic_feature_names(1));
        m.trees = vec![TreeNode::Leaf { value: 1.0 }, TreeNode::Leaf { value: 0.0 }];
        m.alphas = vec![2.0, 1.0];
        assert!((m.score(&[0.0]) - 2.0 / 3.0).abs() < 1e-15);
        m.trees = vec![TreeNode::Leaf { value: 0.9 }; 2];
        assert_eq!(m.score(&[0.0]), 1.0);
        m.trees.clear();
        m.alphas.clear();
        assert_eq!(m.score(&[0.0]), 0.5);
    }

    #[test]
    fn stops_at_chance_level() {
        // XOR-like: no stump beats chance under uniform weights.
        let data = Dataset::new(
            vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![0, 0, 1, 1],
        );
        let m = fit_adaboost(&data, &AdaBoostConfig::default()).unwrap();
        assert!(m.trees.is_empty());
        assert_eq!(m.score(&[0.0, 0.0]), 0.5);
    }

    #[test]
    fn perfect_stump_clamps_and_stops() {
        let data = Dataset::new(vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]], vec![0, 0, 1, 1]);
        let m = fit_adaboost(&data, &AdaBoostConfig { learning_rate: 1.0, ..Default::default() }).unwrap();
        assert_eq!(m.trees.len(), 1);
        assert!((m.alphas[0] - ((1.0 - 1e-10) / 1e-10f64).ln()).abs() < 1e-9);
        assert_eq!(m.score(&[3.0]), 1.0);
        assert_eq!(m.score(&[0.0]), 0.0);
    }

    #[test]
    fn accepted_learners_beat_chance_and_score_matches_sign() {
        let data = separable(500, 21);
        let cfg = AdaBoostConfig { n_learners: 40, ..Default::default() };
        let m = fit_adaboost(&data, &cfg).unwrap();
        assert!(m.alphas.iter().all(|&a| a > 0.0 && a.is_finite()));
        // Re-run the weight recursion to check every accepted stump's weighted error.
        let c = data.canonical();
        let n = c.len();
        let mut w = vec![1.0 / n as f64; n];
        for (t, &a) in m.trees.iter().zip(&m.alphas) {
            let wrong: Vec<bool> = (0..n)
                .map(|i| (vote(t, &c.features[i]) > 0.0) != (c.labels[i] == 1))
                .collect();
            let eps: f64 = (0..n).filter(|&i| wrong[i]).map(|i| w[i]).sum::<f64>() / w.iter().sum::<f64>();
            assert!(eps < 0.5);
            for i in 0..n {
                w[i] *= if wrong[i] { a.exp() } else { (-a).exp() };
            }
            let z: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= z);
        }
        for k in 0..=20 {
            for j in 0..=20 {
                let x = vec![-1.0 + 0.1 * k as f64, -1.0 + 0.1 * j as f64, 0.3, -0.2, 0.1, 0.0];
                let hard = if margin(&m, &x) >= 0.0 { 1 } else { 0 };
                assert_eq!(u8::from(m.score(&x) >= 0.5), hard);
            }
        }
    }
}
