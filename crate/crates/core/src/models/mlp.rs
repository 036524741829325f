use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{dense_grad_slices, Activation, Adam, Mlp, MlpTrace};
use super::scaling::{ColumnScaler, ScalarScaler};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
            activation: Activation::Relu,
            epochs: 150,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 42,
        }
    }
}

/// Feed-forward regressor on standardized inputs and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub x_scaler: ColumnScaler,
    pub y_scaler: ScalarScaler,
    pub net: Mlp,
}

impl MlpModel {
    pub fn fit(params: &MlpParams, x: &[Vec<f64>], y: &[f64]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let x_scaler = ColumnScaler::fit(x);
        let y_scaler = ColumnScaler::fit_column(y);
        let z = x_scaler.transform_all(x);
        let t: Vec<f64> = y.iter().map(|v| y_scaler.transform(*v)).collect();

        let mut dims = params.hidden.clone();
        dims.push(1);
        let mut net = Mlp::new(x_scaler.mean.len(), &dims, params.activation, &mut rng);
        let mut opt = Adam::new(params.learning_rate);
        let mut grads = net.zero_grads();
        let mut trace = MlpTrace::default();
        let mut order: Vec<usize> = (0..t.len()).collect();
        let batch = params.batch_size.max(1);
        for _ in 0..params.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch) {
                grads.iter_mut().for_each(|g| g.clear());
                for &i in chunk {
                    net.forward_trace(&z[i], &mut trace);
                    let out = trace.outputs.last().unwrap()[0];
                    net.backward(&trace, &[2.0 * (out - t[i])], &mut grads);
                }
                let g = dense_grad_slices(&grads);
                opt.step(&mut net.params_mut(), &g, 1.0 / chunk.len() as f64);
            }
        }
        Self {
            x_scaler,
            y_scaler,
            net,
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.y_scaler.inverse(self.net.forward(&self.x_scaler.transform(row))[0])
    }
}
