use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{Tree, TreeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Fraction of features tried at each split.
    pub max_features: f64,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 10,
            min_samples_leaf: 2,
            max_features: 0.6,
            seed: 42,
        }
    }
}

/// Bagged CART regressors with per-split feature subsampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
}

impl ForestModel {
    pub fn fit(params: &ForestParams, x: &[Vec<f64>], y: &[f64]) -> Self {
        let n = y.len();
        let d = x.first().map_or(0, Vec::len);
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let grad: Vec<f64> = y.iter().map(|v| -v).collect();
        let hess = vec![1.0; n];
        let tree_params = TreeParams {
            max_depth: params.max_depth,
            min_samples_leaf: params.min_samples_leaf.max(1),
            min_child_weight: 0.0,
            lambda: 0.0,
            gamma: 0.0,
            max_features: Some(((params.max_features * d as f64).ceil() as usize).clamp(1, d.max(1))),
        };
        let trees = (0..params.n_trees.max(1))
            .map(|_| {
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                Tree::fit(x, &grad, &hess, rows, tree_params, &mut rng)
            })
            .collect();
        Self { trees }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }
}
