use serde::{Deserialize, Serialize};

use super::scaling::ColumnScaler;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct LinearParams {
    /// Ridge penalty on standardized coefficients; 0 is ordinary least squares.
    pub l2: f64,
}

/// Least-squares linear model `y = b + w·x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl LinearModel {
    pub fn fit(params: &LinearParams, x: &[Vec<f64>], y: &[f64]) -> Self {
        let scaler = ColumnScaler::fit(x);
        let z = scaler.transform_all(x);
        let d = scaler.mean.len();
        let n = y.len() as f64;
        let y_mean = y.iter().sum::<f64>() / n;

        // Normal equations on centred, scaled columns; tiny jitter keeps
        // collinear designs solvable.
        let mut a = vec![vec![0.0; d]; d];
        let mut b = vec![0.0; d];
        for (row, t) in z.iter().zip(y) {
            for i in 0..d {
                b[i] += row[i] * (t - y_mean);
                for j in i..d {
                    a[i][j] += row[i] * row[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                a[i][j] = a[j][i];
            }
            a[i][i] += params.l2 * n + 1e-10 * n;
        }
        let w = solve_spd(a, b);

        let coefficients: Vec<f64> = w.iter().zip(&scaler.std).map(|(w, s)| w / s).collect();
        let intercept = y_mean - coefficients.iter().zip(&scaler.mean).map(|(c, m)| c * m).sum::<f64>();
        Self {
            intercept,
            coefficients,
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(row).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// Cholesky solve of a symmetric positive-definite system.
fn solve_spd(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let d = b.len();
    for j in 0..d {
        let mut diag = a[j][j];
        for k in 0..j {
            diag -= a[j][k] * a[j][k];
        }
        let diag = diag.max(1e-300).sqrt();
        a[j][j] = diag;
        for i in (j + 1)..d {
            let mut v = a[i][j];
            for k in 0..j {
                v -= a[i][k] * a[j][k];
            }
            a[i][j] = v / diag;
        }
    }
    for i in 0..d {
        for k in 0..i {
            b[i] -= a[i][k] * b[k];
        }
        b[i] /= a[i][i];
    }
    for i in (0..d).rev() {
        for k in (i + 1)..d {
            b[i] -= a[k][i] * b[k];
        }
        b[i] /= a[i][i];
    }
    b
}
