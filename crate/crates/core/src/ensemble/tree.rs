//! CART trees: weighted classification (leaf = class-1 proportion) and least-squares regression.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{entropy, gini, Criterion};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        /// Samples with `x[feature] <= threshold` go left.
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaves() + right.leaves(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub criterion: Criterion,
    /// Features drawn per split; `None` uses all.
    pub feature_subset_size: Option<usize>,
    pub rng_seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 8,
            min_leaf: 1,
            criterion: Criterion::Gini,
            feature_subset_size: None,
            rng_seed: 0,
        }
    }
}

#[derive(Clone, Copy)]
enum Mode {
    Classify(Criterion),
    Regress,
}

struct Fitter<'a> {
    columns: Vec<Vec<f64>>,
    target: &'a [f64],
    weight: &'a [f64],
    mode: Mode,
    cfg: TreeConfig,
    rng: Option<ChaCha8Rng>,
}

const GAIN_EPS: f64 = 1e-12;

fn impurity(mode: Mode, w: f64, wy: f64, wyy: f64) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    match mode {
        Mode::Classify(c) => {
            let p = (wy / w).clamp(0.0, 1.0);
            match c {
                Criterion::Gini => gini(&[p, 1.0 - p]),
                Criterion::Entropy => entropy(&[p, 1.0 - p]),
            }
        }
        Mode::Regress => (wyy / w - (wy / w).powi(2)).max(0.0),
    }
}

impl Fitter<'_> {
    fn stats(&self, idx: &[usize]) -> (f64, f64, f64) {
        let mut s = (0.0, 0.0, 0.0);
        for &i in idx {
            let (w, y) = (self.weight[i], self.target[i]);
            s.0 += w;
            s.1 += w * y;
            s.2 += w * y * y;
        }
        s
    }

    fn leaf(&self, idx: &[usize]) -> TreeNode {
        let (w, wy, _) = self.stats(idx);
        let value = if w > 0.0 {
            wy / w
        } else {
            idx.iter().map(|&i| self.target[i]).sum::<f64>() / idx.len().max(1) as f64
        };
        TreeNode::Leaf { value }
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let d = self.columns.len();
        match (self.cfg.feature_subset_size, self.rng.as_mut()) {
            (Some(k), Some(rng)) if k < d => {
                let mut f = sample(rng, d, k.max(1)).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    /// Best (feature, threshold, gain) over the candidate features.
    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64, f64)> {
        let (w, wy, wyy) = self.stats(idx);
        if w <= 0.0 {
            return None;
        }
        let parent = impurity(self.mode, w, wy, wyy);
        let min_leaf = self.cfg.min_leaf.max(1);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = idx.to_vec();
        for f in self.candidate_features() {
            let col = &self.columns[f];
            order.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            let (mut lw, mut lwy, mut lwyy) = (0.0, 0.0, 0.0);
            for pos in 0..order.len() - 1 {
                let i = order[pos];
                let (wi, yi) = (self.weight[i], self.target[i]);
                lw += wi;
                lwy += wi * yi;
                lwyy += wi * yi * yi;
                let (a, b) = (col[i], col[order[pos + 1]]);
                if a == b || pos + 1 < min_leaf || order.len() - pos - 1 < min_leaf {
                    continue;
                }
                let (rw, rwy, rwyy) = (w - lw, wy - lwy, wyy - lwyy);
                let child = (lw * impurity(self.mode, lw, lwy, lwyy)
                    + rw.max(0.0) * impurity(self.mode, rw, rwy, rwyy))
                    / w;
                let gain = parent - child;
                let mut threshold = a + (b - a) / 2.0;
                if threshold >= b {
                    threshold = a;
                }
                let better = match best {
                    None => gain > GAIN_EPS,
                    Some((_, _, g)) => gain > g + GAIN_EPS,
                };
                if better {
                    best = Some((f, threshold, gain));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: &[usize], depth: usize) -> TreeNode {
        if depth >= self.cfg.max_depth || idx.len() < 2 * self.cfg.min_leaf.max(1) {
            return self.leaf(idx);
        }
        let first = self.target[idx[0]];
        if idx.iter().all(|&i| self.target[i] == first) {
            return self.leaf(idx);
        }
        let Some((feature, threshold, _)) = self.best_split(idx) else {
            return self.leaf(idx);
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.columns[feature][i] <= threshold);
        TreeNode::Split {
            feature,
            threshold,
            left: Box::new(self.grow(&l, depth + 1)),
            right: Box::new(self.grow(&r, depth + 1)),
        }
    }
}

fn fit(
    rows: &[Vec<f64>],
    target: &[f64],
    weight: &[f64],
    indices: &[usize],
    mode: Mode,
    cfg: &TreeConfig,
) -> TreeNode {
    let d = rows.first().map_or(0, Vec::len);
    let columns = (0..d).map(|f| rows.iter().map(|r| r[f]).collect()).collect();
    let rng = cfg
        .feature_subset_size
        .filter(|&k| k < d)
        .map(|_| ChaCha8Rng::seed_from_u64(cfg.rng_seed));
    let mut fitter = Fitter {
        columns,
        target,
        weight,
        mode,
        cfg: *cfg,
        rng,
    };
    if indices.is_empty() {
        return TreeNode::Leaf { value: 0.0 };
    }
    fitter.grow(indices, 0)
}

/// Weighted classification tree over `indices` (repeats allowed) of `rows`.
pub fn fit_classification_tree(
    rows: &[Vec<f64>],
    labels: &[f64],
    weights: &[f64],
    indices: &[usize],
    cfg: &TreeConfig,
) -> TreeNode {
    fit(rows, labels, weights, indices, Mode::Classify(cfg.criterion), cfg)
}

/// Weighted least-squares regression tree; leaves hold the weighted mean target.
pub fn fit_regression_tree(
    rows: &[Vec<f64>],
    target: &[f64],
    weights: &[f64],
    indices: &[usize],
    cfg: &TreeConfig,
) -> TreeNode {
    fit(rows, target, weights, indices, Mode::Regress, cfg)
}

/// Draws a tree-specific generator from the master seed.
pub(crate) fn tree_rng(master: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index as u64 + 1);
    rng
}
