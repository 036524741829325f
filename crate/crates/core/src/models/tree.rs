//! Second-order regression trees shared by boosting and the random forest.
//!
//! A split maximises `½·(G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)) − γ` over
//! per-sample gradients `g` and hessians `h`; leaves take `−G/(H+λ)`. With
//! `g = −y`, `h = 1` and `λ = 0` this is ordinary variance-reduction CART
//! with mean-valued leaves.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_child_weight: f64,
    pub lambda: f64,
    pub gamma: f64,
    /// Features examined per split; `None` means all.
    pub max_features: Option<usize>,
}

struct Builder<'a, R> {
    x: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    params: TreeParams,
    n_features: usize,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl Tree {
    pub fn fit<R: Rng>(
        x: &[Vec<f64>],
        grad: &[f64],
        hess: &[f64],
        indices: Vec<usize>,
        params: TreeParams,
        rng: &mut R,
    ) -> Self {
        let n_features = x.first().map_or(0, Vec::len);
        let mut b = Builder {
            x,
            grad,
            hess,
            params,
            n_features,
            rng,
            nodes: Vec::new(),
        };
        b.grow(indices, 0);
        Tree { nodes: b.nodes }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

impl<R: Rng> Builder<'_, R> {
    fn sums(&self, idx: &[usize]) -> (f64, f64) {
        idx.iter()
            .fold((0.0, 0.0), |(g, h), &i| (g + self.grad[i], h + self.hess[i]))
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let (g, h) = self.sums(&idx);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: -g / (h + self.params.lambda).max(f64::MIN_POSITIVE),
        });
        if depth >= self.params.max_depth || idx.len() < 2 * self.params.min_samples_leaf.max(1) {
            return id;
        }
        let Some(best) = self.best_split(&idx, g, h) else {
            return id;
        };
        let left = self.grow(best.left, depth + 1);
        let right = self.grow(best.right, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&mut self, idx: &[usize], g_total: f64, h_total: f64) -> Option<BestSplit> {
        let p = self.params;
        let features: Vec<usize> = match p.max_features {
            Some(k) if k < self.n_features => sample(self.rng, self.n_features, k.max(1)).into_vec(),
            _ => (0..self.n_features).collect(),
        };
        let parent = g_total * g_total / (h_total + p.lambda);
        let mut best: Option<(f64, usize, f64, usize)> = None;
        let mut order: Vec<usize> = idx.to_vec();
        for &f in &features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                let i = order[k];
                gl += self.grad[i];
                hl += self.hess[i];
                let (v, next) = (self.x[i][f], self.x[order[k + 1]][f]);
                if v == next {
                    continue;
                }
                let n_left = k + 1;
                if n_left < p.min_samples_leaf || order.len() - n_left < p.min_samples_leaf {
                    continue;
                }
                let (gr, hr) = (g_total - gl, h_total - hl);
                if hl < p.min_child_weight || hr < p.min_child_weight {
                    continue;
                }
                let gain = 0.5 * (gl * gl / (hl + p.lambda) + gr * gr / (hr + p.lambda) - parent) - p.gamma;
                if gain > 1e-12 && best.is_none_or(|(bg, ..)| gain > bg) {
                    best = Some((gain, f, 0.5 * (v + next), n_left));
                }
            }
        }
        let (gain, feature, threshold, _) = best?;
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        Some(BestSplit {
            gain,
            feature,
            threshold,
            left,
            right,
        })
        .filter(|s| s.gain > 0.0 && !s.left.is_empty() && !s.right.is_empty())
    }
}
