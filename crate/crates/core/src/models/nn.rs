//! Small dense and recurrent layers with hand-written gradients.
//!
//! Everything is `f64` and single-sample; callers accumulate gradients over
//! a mini-batch and hand them to [`Adam`].

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => x.max(0.0),
            Self::Tanh => x.tanh(),
            Self::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Self::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tanh => 1.0 - y * y,
            Self::Identity => 1.0,
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

/// Fully connected layer, weights row-major `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: glorot(rng, in_dim, out_dim, in_dim * out_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn from_parts(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Self {
        assert_eq!(weights.len(), in_dim * out_dim);
        assert_eq!(bias.len(), out_dim);
        Self {
            in_dim,
            out_dim,
            weights,
            bias,
        }
    }

    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.in_dim).zip(&self.bias))
        {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients; writes `∂L/∂x` into `grad_in` when given.
    pub fn backward(&self, x: &[f64], grad_out: &[f64], grads: &mut DenseGrads, grad_in: Option<&mut [f64]>) {
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.bias[o] += g;
            let row = &mut grads.weights[o * self.in_dim..(o + 1) * self.in_dim];
            for (w, v) in row.iter_mut().zip(x) {
                *w += g * v;
            }
        }
        if let Some(grad_in) = grad_in {
            grad_in.iter_mut().for_each(|v| *v = 0.0);
            for (o, &g) in grad_out.iter().enumerate() {
                let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                for (gi, w) in grad_in.iter_mut().zip(row) {
                    *gi += g * w;
                }
            }
        }
    }

    pub fn zero_grads(&self) -> DenseGrads {
        DenseGrads {
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseGrads {
    pub fn clear(&mut self) {
        self.weights.iter_mut().for_each(|v| *v = 0.0);
        self.bias.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Stack of dense layers; `activation` on hidden layers, identity on the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

/// Per-sample forward activations, reused across calls.
#[derive(Debug, Clone, Default)]
pub struct MlpTrace {
    /// `outputs[0]` is the input; `outputs[k]` is layer `k-1`'s post-activation output.
    pub outputs: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new<R: Rng>(in_dim: usize, layer_dims: &[usize], activation: Activation, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(layer_dims.len());
        let mut prev = in_dim;
        for &d in layer_dims {
            layers.push(Dense::new(prev, d, rng));
            prev = d;
        }
        Self { layers, activation }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward_trace(&self, x: &[f64], trace: &mut MlpTrace) {
        trace.outputs.resize(self.layers.len() + 1, Vec::new());
        trace.outputs[0].clear();
        trace.outputs[0].extend_from_slice(x);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let (done, rest) = trace.outputs.split_at_mut(k + 1);
            let out = &mut rest[0];
            out.resize(layer.out_dim, 0.0);
            layer.forward(&done[k], out);
            if k != last {
                out.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut trace = MlpTrace::default();
        self.forward_trace(x, &mut trace);
        trace.outputs.pop().unwrap_or_default()
    }

    /// Backpropagates `grad_out` through a recorded trace; returns `∂L/∂input`.
    pub fn backward(&self, trace: &MlpTrace, grad_out: &[f64], grads: &mut [DenseGrads]) -> Vec<f64> {
        let mut grad = grad_out.to_vec();
        let last = self.layers.len() - 1;
        for k in (0..self.layers.len()).rev() {
            if k != last {
                for (g, y) in grad.iter_mut().zip(&trace.outputs[k + 1]) {
                    *g *= self.activation.derivative_from_output(*y);
                }
            }
            let mut grad_in = vec![0.0; self.layers[k].in_dim];
            self.layers[k].backward(&trace.outputs[k], &grad, &mut grads[k], Some(&mut grad_in));
            grad = grad_in;
        }
        grad
    }

    pub fn zero_grads(&self) -> Vec<DenseGrads> {
        self.layers.iter().map(Dense::zero_grads).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

pub fn dense_grad_slices(grads: &[DenseGrads]) -> Vec<&[f64]> {
    grads
        .iter()
        .flat_map(|g| [g.weights.as_slice(), g.bias.as_slice()])
        .collect()
}

/// Single-layer LSTM; gate order input, forget, cell, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub in_dim: usize,
    pub hidden: usize,
    /// `4h × in`.
    pub w_input: Vec<f64>,
    /// `4h × h`.
    pub w_recurrent: Vec<f64>,
    /// `4h`.
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct LstmStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct LstmTrace {
    steps: Vec<LstmStep>,
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub w_input: Vec<f64>,
    pub w_recurrent: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LstmGrads {
    pub fn clear(&mut self) {
        for v in [&mut self.w_input, &mut self.w_recurrent, &mut self.bias] {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn slices(&self) -> [&[f64]; 3] {
        [&self.w_input, &self.w_recurrent, &self.bias]
    }
}

impl Lstm {
    pub fn new<R: Rng>(in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut bias = vec![0.0; 4 * hidden];
        // Forget-gate bias starts at 1.
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        Self {
            in_dim,
            hidden,
            w_input: glorot(rng, in_dim, 4 * hidden, 4 * hidden * in_dim),
            w_recurrent: glorot(rng, hidden, 4 * hidden, 4 * hidden * hidden),
            bias,
        }
    }

    /// Runs the sequence and returns the final hidden state.
    pub fn forward(&self, seq: &[&[f64]], trace: &mut LstmTrace) -> Vec<f64> {
        let h = self.hidden;
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        trace.steps.resize(seq.len(), LstmStep::default());
        for (t, x) in seq.iter().enumerate() {
            let step = &mut trace.steps[t];
            step.gates.resize(4 * h, 0.0);
            for r in 0..4 * h {
                let wi = &self.w_input[r * self.in_dim..(r + 1) * self.in_dim];
                let wr = &self.w_recurrent[r * h..(r + 1) * h];
                step.gates[r] = self.bias[r]
                    + wi.iter().zip(x.iter()).map(|(w, v)| w * v).sum::<f64>()
                    + wr.iter().zip(&h_prev).map(|(w, v)| w * v).sum::<f64>();
            }
            for j in 0..h {
                step.gates[j] = sigmoid(step.gates[j]);
                step.gates[h + j] = sigmoid(step.gates[h + j]);
                step.gates[2 * h + j] = step.gates[2 * h + j].tanh();
                step.gates[3 * h + j] = sigmoid(step.gates[3 * h + j]);
            }
            step.c.resize(h, 0.0);
            step.tanh_c.resize(h, 0.0);
            let mut h_new = vec![0.0; h];
            for j in 0..h {
                let (i, f, g, o) = (
                    step.gates[j],
                    step.gates[h + j],
                    step.gates[2 * h + j],
                    step.gates[3 * h + j],
                );
                step.c[j] = f * c_prev[j] + i * g;
                step.tanh_c[j] = step.c[j].tanh();
                h_new[j] = o * step.tanh_c[j];
            }
            step.x.clear();
            step.x.extend_from_slice(x);
            step.h_prev = std::mem::replace(&mut h_prev, h_new);
            step.c_prev = std::mem::replace(&mut c_prev, step.c.clone());
        }
        h_prev
    }

    /// Backpropagation through time from a gradient on the final hidden state.
    pub fn backward(&self, trace: &LstmTrace, grad_h_last: &[f64], grads: &mut LstmGrads) {
        let h = self.hidden;
        let mut dh = grad_h_last.to_vec();
        let mut dc = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        for step in trace.steps.iter().rev() {
            for j in 0..h {
                let (i, f, g, o) = (
                    step.gates[j],
                    step.gates[h + j],
                    step.gates[2 * h + j],
                    step.gates[3 * h + j],
                );
                let d_o = dh[j] * step.tanh_c[j];
                dc[j] += dh[j] * o * (1.0 - step.tanh_c[j] * step.tanh_c[j]);
                let d_i = dc[j] * g;
                let d_g = dc[j] * i;
                let d_f = dc[j] * step.c_prev[j];
                dz[j] = d_i * i * (1.0 - i);
                dz[h + j] = d_f * f * (1.0 - f);
                dz[2 * h + j] = d_g * (1.0 - g * g);
                dz[3 * h + j] = d_o * o * (1.0 - o);
                dc[j] *= f;
            }
            let mut dh_prev = vec![0.0; h];
            for r in 0..4 * h {
                let d = dz[r];
                if d == 0.0 {
                    continue;
                }
                grads.bias[r] += d;
                let gi = &mut grads.w_input[r * self.in_dim..(r + 1) * self.in_dim];
                for (g, x) in gi.iter_mut().zip(&step.x) {
                    *g += d * x;
                }
                let gr = &mut grads.w_recurrent[r * h..(r + 1) * h];
                let wr = &self.w_recurrent[r * h..(r + 1) * h];
                for k in 0..h {
                    gr[k] += d * step.h_prev[k];
                    dh_prev[k] += d * wr[k];
                }
            }
            dh = dh_prev;
        }
    }

    pub fn zero_grads(&self) -> LstmGrads {
        LstmGrads {
            w_input: vec![0.0; self.w_input.len()],
            w_recurrent: vec![0.0; self.w_recurrent.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 3] {
        [&mut self.w_input, &mut self.w_recurrent, &mut self.bias]
    }
}

/// Adam over an ordered list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update; `scale` multiplies every gradient first (e.g. `1/batch`).
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], scale: f64) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gi = g[i] * scale;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                p[i] -= self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Central differences against the analytic gradient of L = Σ w_k·out_k.
    fn check(analytic: f64, numeric: f64) {
        let scale = analytic.abs().max(numeric.abs()).max(1e-3);
        assert!(
            (analytic - numeric).abs() / scale < 1e-5,
            "analytic {analytic} vs numeric {numeric}"
        );
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::new(3, &[5, 2], Activation::Tanh, &mut rng);
        let x = [0.3, -0.7, 1.1];
        let w_out = [0.4, -1.3];
        let loss = |net: &Mlp| -> f64 { net.forward(&x).iter().zip(&w_out).map(|(a, b)| a * b).sum() };

        let mut trace = MlpTrace::default();
        net.forward_trace(&x, &mut trace);
        let mut grads = net.zero_grads();
        let grad_x = net.backward(&trace, &w_out, &mut grads);

        let eps = 1e-6;
        for layer in 0..net.layers.len() {
            for i in 0..net.layers[layer].weights.len() {
                let orig = net.layers[layer].weights[i];
                net.layers[layer].weights[i] = orig + eps;
                let up = loss(&net);
                net.layers[layer].weights[i] = orig - eps;
                let down = loss(&net);
                net.layers[layer].weights[i] = orig;
                check(grads[layer].weights[i], (up - down) / (2.0 * eps));
            }
        }
        for i in 0..3 {
            let mut xp = x;
            xp[i] += eps;
            let mut xm = x;
            xm[i] -= eps;
            let f = |v: &[f64]| -> f64 { net.forward(v).iter().zip(&w_out).map(|(a, b)| a * b).sum() };
            check(grad_x[i], (f(&xp) - f(&xm)) / (2.0 * eps));
        }
    }

    #[test]
    fn lstm_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut lstm = Lstm::new(1, 3, &mut rng);
        let seq = [[0.5], [-0.2], [1.3], [0.1]];
        let w_out = [0.7, -0.4, 1.2];
        let loss = |lstm: &Lstm| -> f64 {
            let refs: Vec<&[f64]> = seq.iter().map(|s| s.as_slice()).collect();
            let h = lstm.forward(&refs, &mut LstmTrace::default());
            h.iter().zip(&w_out).map(|(a, b)| a * b).sum()
        };

        let refs: Vec<&[f64]> = seq.iter().map(|s| s.as_slice()).collect();
        let mut trace = LstmTrace::default();
        lstm.forward(&refs, &mut trace);
        let mut grads = lstm.zero_grads();
        lstm.backward(&trace, &w_out, &mut grads);

        let eps = 1e-6;
        for which in 0..3 {
            let n = lstm.params_mut()[which].len();
            for i in 0..n {
                let orig = lstm.params_mut()[which][i];
                lstm.params_mut()[which][i] = orig + eps;
                let up = loss(&lstm);
                lstm.params_mut()[which][i] = orig - eps;
                let down = loss(&lstm);
                lstm.params_mut()[which][i] = orig;
                check(grads.slices()[which][i], (up - down) / (2.0 * eps));
            }
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut [p.as_mut_slice()], &[g.as_slice()], 1.0);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2), "{p:?}");
    }
}
