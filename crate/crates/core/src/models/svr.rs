//! Epsilon-insensitive support vector regression with an RBF kernel.
//!
//! The bias is folded into the kernel (`K + 1`), which removes the equality
//! constraint from the dual. The dual in `β = α − α*` is then
//! `min ½βᵀKβ − yᵀβ + ε‖β‖₁` subject to `|β_i| ≤ C`, solved by exact
//! coordinate descent (soft-threshold then clip).

use serde::{Deserialize, Serialize};

use super::scaling::ColumnScaler;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    /// RBF width; `None` uses `1 / n_features` on standardized inputs.
    pub gamma: Option<f64>,
    pub max_sweeps: usize,
    pub tolerance: f64,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            epsilon: 0.1,
            gamma: None,
            max_sweeps: 200,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub scaler: ColumnScaler,
    pub gamma: f64,
    pub offset: f64,
    pub support: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
    pub sweeps: usize,
}

fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp() + 1.0
}

impl SvrModel {
    pub fn fit(params: &SvrParams, x: &[Vec<f64>], y: &[f64]) -> Self {
        let n = y.len();
        let scaler = ColumnScaler::fit(x);
        let z = scaler.transform_all(x);
        let d = scaler.mean.len().max(1);
        let gamma = params.gamma.unwrap_or(1.0 / d as f64);
        let offset = y.iter().sum::<f64>() / n as f64;
        let target: Vec<f64> = y.iter().map(|v| v - offset).collect();

        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rbf(gamma, &z[i], &z[j]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }

        let mut beta = vec![0.0; n];
        let mut f = vec![0.0; n];
        let mut sweeps = 0;
        while sweeps < params.max_sweeps {
            sweeps += 1;
            let mut max_delta: f64 = 0.0;
            for i in 0..n {
                let kii = k[i * n + i];
                let g = target[i] - (f[i] - kii * beta[i]);
                let soft = g.signum() * (g.abs() - params.epsilon).max(0.0);
                let new = (soft / kii).clamp(-params.c, params.c);
                let delta = new - beta[i];
                if delta != 0.0 {
                    let row = &k[i * n..(i + 1) * n];
                    for (fj, kij) in f.iter_mut().zip(row) {
                        *fj += delta * kij;
                    }
                    beta[i] = new;
                    max_delta = max_delta.max(delta.abs());
                }
            }
            if max_delta < params.tolerance {
                break;
            }
        }

        let (support, coefficients): (Vec<_>, Vec<_>) = z
            .into_iter()
            .zip(beta)
            .filter(|(_, b)| *b != 0.0)
            .unzip();
        Self {
            scaler,
            gamma,
            offset,
            support,
            coefficients,
            sweeps,
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let z = self.scaler.transform(row);
        self.offset
            + self
                .support
                .iter()
                .zip(&self.coefficients)
                .map(|(s, b)| b * rbf(self.gamma, s, &z))
                .sum::<f64>()
    }
}
