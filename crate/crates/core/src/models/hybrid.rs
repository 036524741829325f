//! Stage-1 hybrid AOD model.
//!
//! A tabular regressor reads the static meteorology; a sequence encoder reads
//! the four engineered AOD values `[lag2, lag1, roll3, roll7]` as a length-4,
//! one-channel sequence. A dense head maps `concat(encoder output, static
//! prediction)` to the standardized AOD. The static branch is fitted first
//! and then frozen; the encoder and head are trained together on MSE.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{dense_grad_slices, Activation, Adam, Dense, Lstm, LstmTrace, Mlp, MlpTrace};
use super::scaling::{ColumnScaler, ScalarScaler};
use super::{fit_static_regressor, ModelError, RegressorConfig, Result, StaticRegressor, MIN_TRAINING_ROWS};
use crate::features::{SequenceFeatures, Stage1Dataset, StaticFeatures};

const SEQ_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    #[default]
    BidirectionalRecurrent,
    LinearAutoregressive,
}

impl std::str::FromStr for EncoderKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "bidirectional-recurrent" | "bilstm" | "lstm" => Ok(Self::BidirectionalRecurrent),
            "linear-autoregressive" | "linear" | "ar" => Ok(Self::LinearAutoregressive),
            _ => Err(ModelError::InvalidConfig(format!("unknown encoder kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceEncoder {
    pub kind: EncoderKind,
    /// Units per direction for the recurrent kind; output width for the linear kind.
    pub hidden_dim: usize,
}

impl Default for SequenceEncoder {
    fn default() -> Self {
        Self {
            kind: EncoderKind::BidirectionalRecurrent,
            hidden_dim: 16,
        }
    }
}

impl SequenceEncoder {
    /// Width of the encoded vector; the two recurrent directions are concatenated.
    pub fn output_dim(&self) -> usize {
        match self.kind {
            EncoderKind::BidirectionalRecurrent => 2 * self.hidden_dim,
            EncoderKind::LinearAutoregressive => self.hidden_dim,
        }
    }

    fn init(&self, rng: &mut ChaCha8Rng) -> FittedEncoder {
        match self.kind {
            EncoderKind::BidirectionalRecurrent => FittedEncoder::BidirectionalRecurrent {
                forward: Lstm::new(1, self.hidden_dim, rng),
                backward: Lstm::new(1, self.hidden_dim, rng),
            },
            EncoderKind::LinearAutoregressive => {
                FittedEncoder::LinearAutoregressive(Dense::new(SEQ_LEN, self.hidden_dim, rng))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FittedEncoder {
    BidirectionalRecurrent { forward: Lstm, backward: Lstm },
    LinearAutoregressive(Dense),
}

#[derive(Default)]
struct EncoderTrace {
    fwd: LstmTrace,
    bwd: LstmTrace,
}

enum EncoderGrads {
    Recurrent(super::nn::LstmGrads, super::nn::LstmGrads),
    Linear(super::nn::DenseGrads),
}

impl EncoderGrads {
    fn clear(&mut self) {
        match self {
            Self::Recurrent(a, b) => {
                a.clear();
                b.clear();
            }
            Self::Linear(g) => g.clear(),
        }
    }

    fn slices(&self) -> Vec<&[f64]> {
        match self {
            Self::Recurrent(a, b) => a.slices().into_iter().chain(b.slices()).collect(),
            Self::Linear(g) => dense_grad_slices(std::slice::from_ref(g)),
        }
    }
}

impl FittedEncoder {
    pub fn output_dim(&self) -> usize {
        match self {
            Self::BidirectionalRecurrent { forward, backward } => forward.hidden + backward.hidden,
            Self::LinearAutoregressive(d) => d.out_dim,
        }
    }

    fn encode_trace(&self, seq: &[f64; SEQ_LEN], trace: &mut EncoderTrace) -> Vec<f64> {
        match self {
            Self::BidirectionalRecurrent { forward, backward } => {
                let steps: Vec<&[f64]> = seq.iter().map(std::slice::from_ref).collect();
                let rev: Vec<&[f64]> = steps.iter().rev().copied().collect();
                let mut out = forward.forward(&steps, &mut trace.fwd);
                out.extend(backward.forward(&rev, &mut trace.bwd));
                out
            }
            Self::LinearAutoregressive(d) => {
                let mut out = vec![0.0; d.out_dim];
                d.forward(seq, &mut out);
                out
            }
        }
    }

    pub fn encode(&self, seq: &[f64; SEQ_LEN]) -> Vec<f64> {
        self.encode_trace(seq, &mut EncoderTrace::default())
    }

    fn backward(&self, seq: &[f64; SEQ_LEN], trace: &EncoderTrace, grad_out: &[f64], grads: &mut EncoderGrads) {
        match (self, grads) {
            (Self::BidirectionalRecurrent { forward, backward }, EncoderGrads::Recurrent(gf, gb)) => {
                let h = forward.hidden;
                forward.backward(&trace.fwd, &grad_out[..h], gf);
                backward.backward(&trace.bwd, &grad_out[h..], gb);
            }
            (Self::LinearAutoregressive(d), EncoderGrads::Linear(g)) => d.backward(seq, grad_out, g, None),
            _ => unreachable!("encoder/gradient kind mismatch"),
        }
    }

    fn zero_grads(&self) -> EncoderGrads {
        match self {
            Self::BidirectionalRecurrent { forward, backward } => {
                EncoderGrads::Recurrent(forward.zero_grads(), backward.zero_grads())
            }
            Self::LinearAutoregressive(d) => EncoderGrads::Linear(d.zero_grads()),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Self::BidirectionalRecurrent { forward, backward } => {
                forward.params_mut().into_iter().chain(backward.params_mut()).collect()
            }
            Self::LinearAutoregressive(d) => vec![d.weights.as_mut_slice(), d.bias.as_mut_slice()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    /// Layer widths; the last must be 1.
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            layer_dims: vec![16, 1],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Blocked folds used to produce out-of-fold static predictions as head
    /// inputs during training; 0 or 1 feeds in-sample predictions instead.
    pub static_oof_folds: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 42,
            static_oof_folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionHead {
    pub config: HeadConfig,
    pub training: TrainingConfig,
    pub net: Option<Mlp>,
}

impl FusionHead {
    pub fn new(config: HeadConfig, training: TrainingConfig) -> Self {
        Self {
            config,
            training,
            net: None,
        }
    }
}

/// Scales applied to encoder and head inputs and to the target.
///
/// All four sequence values share one scale so the encoder sees them as a
/// single channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputStandardizer {
    pub sequence: ScalarScaler,
    pub static_prediction: ScalarScaler,
    pub target: ScalarScaler,
}

impl InputStandardizer {
    pub fn identity() -> Self {
        Self {
            sequence: ScalarScaler::identity(),
            static_prediction: ScalarScaler::identity(),
            target: ScalarScaler::identity(),
        }
    }

    fn sequence(&self, seq: &SequenceFeatures) -> [f64; SEQ_LEN] {
        seq.to_array().map(|v| self.sequence.transform(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AodPrediction {
    pub value: f64,
    /// The raw output was negative and has been clamped to 0.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridAodModel {
    pub static_branch: StaticRegressor,
    pub encoder: SequenceEncoder,
    pub fitted_encoder: Option<FittedEncoder>,
    pub head: FusionHead,
    pub standardizer: Option<InputStandardizer>,
    /// Full-pass training MSE in AOD units: before training, then after each epoch.
    pub loss_history: Vec<f64>,
}

impl HybridAodModel {
    pub fn new(static_config: RegressorConfig, encoder: SequenceEncoder, head: HeadConfig, training: TrainingConfig) -> Self {
        Self {
            static_branch: StaticRegressor::new(static_config),
            encoder,
            fitted_encoder: None,
            head: FusionHead::new(head, training),
            standardizer: None,
            loss_history: Vec::new(),
        }
    }

    /// Assembles a model from already-fitted parts.
    pub fn from_parts(
        static_branch: StaticRegressor,
        encoder: FittedEncoder,
        head: Mlp,
        standardizer: InputStandardizer,
    ) -> Self {
        let kind = match &encoder {
            FittedEncoder::BidirectionalRecurrent { forward, .. } => SequenceEncoder {
                kind: EncoderKind::BidirectionalRecurrent,
                hidden_dim: forward.hidden,
            },
            FittedEncoder::LinearAutoregressive(d) => SequenceEncoder {
                kind: EncoderKind::LinearAutoregressive,
                hidden_dim: d.out_dim,
            },
        };
        let config = HeadConfig {
            layer_dims: head.layers.iter().map(|l| l.out_dim).collect(),
            activation: head.activation,
        };
        Self {
            static_branch,
            encoder: kind,
            fitted_encoder: Some(encoder),
            head: FusionHead {
                config,
                training: TrainingConfig::default(),
                net: Some(head),
            },
            standardizer: Some(standardizer),
            loss_history: Vec::new(),
        }
    }

    pub fn is_fitted(&self) -> bool {
        self.static_branch.is_fitted() && self.fitted_encoder.is_some() && self.head.net.is_some() && self.standardizer.is_some()
    }

    /// Fits the static branch on `train`, then the encoder and head.
    pub fn fit(mut self, train: &Stage1Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(ModelError::EmptyDataset("stage-1"));
        }
        self.static_branch = fit_static_regressor(self.static_branch, &train.static_matrix(), &train.targets())?;
        fit_sequence_fusion(self, train)
    }

    /// Unclamped model output for the ten joint inputs: six static then four sequence values.
    pub fn predict_raw(&self, inputs: &[f64]) -> Result<f64> {
        if inputs.len() != 10 {
            return Err(ModelError::WrongWidth {
                expected: 10,
                found: inputs.len(),
            });
        }
        let (Some(enc), Some(net), Some(std)) = (&self.fitted_encoder, &self.head.net, &self.standardizer) else {
            return Err(ModelError::NotFitted("hybrid model"));
        };
        let s = self.static_branch.predict(&inputs[..6])?;
        let seq = std.sequence(&SequenceFeatures::from_slice(&inputs[6..]));
        let mut h = enc.encode(&seq);
        h.push(std.static_prediction.transform(s));
        Ok(std.target.inverse(net.forward(&h)[0]))
    }

    pub fn predict_inputs(&self, inputs: &[f64]) -> Result<AodPrediction> {
        let raw = self.predict_raw(inputs)?;
        if !raw.is_finite() {
            return Err(ModelError::NonFiniteInput);
        }
        Ok(if raw < 0.0 {
            AodPrediction {
                value: 0.0,
                clamped: true,
            }
        } else {
            AodPrediction {
                value: raw,
                clamped: false,
            }
        })
    }
}

pub fn joint_inputs(static_features: &StaticFeatures, seq: &SequenceFeatures) -> [f64; 10] {
    let mut out = [0.0; 10];
    out[..6].copy_from_slice(&static_features.to_array());
    out[6..].copy_from_slice(&seq.to_array());
    out
}

pub fn predict_aod(model: &HybridAodModel, static_features: &StaticFeatures, seq: &SequenceFeatures) -> Result<AodPrediction> {
    model.predict_inputs(&joint_inputs(static_features, seq))
}

/// Static predictions for each training row from models that never saw it.
fn out_of_fold_static(model: &StaticRegressor, x: &[Vec<f64>], y: &[f64], folds: usize) -> Result<Vec<f64>> {
    let n = y.len();
    if folds < 2 || n - n.div_ceil(folds) < MIN_TRAINING_ROWS {
        return model.predict_many(x);
    }
    let mut out = vec![0.0; n];
    for k in 0..folds {
        let (lo, hi) = (k * n / folds, (k + 1) * n / folds);
        let tx: Vec<Vec<f64>> = x[..lo].iter().chain(&x[hi..]).cloned().collect();
        let ty: Vec<f64> = y[..lo].iter().chain(&y[hi..]).copied().collect();
        let m = fit_static_regressor(StaticRegressor::new(model.config.clone()), &tx, &ty)?;
        for i in lo..hi {
            out[i] = m.predict(&x[i])?;
        }
    }
    Ok(out)
}

/// Trains encoder and head on `stage1` with the static branch frozen.
pub fn fit_sequence_fusion(mut model: HybridAodModel, stage1: &Stage1Dataset) -> Result<HybridAodModel> {
    if !model.static_branch.is_fitted() {
        return Err(ModelError::NotFitted("static regressor"));
    }
    if stage1.is_empty() {
        return Err(ModelError::EmptyDataset("stage-1"));
    }
    let dims = &model.head.config.layer_dims;
    if dims.last() != Some(&1) || dims.contains(&0) {
        return Err(ModelError::InvalidConfig("head layer dims must be positive and end in 1".into()));
    }
    if model.encoder.hidden_dim == 0 {
        return Err(ModelError::InvalidConfig("encoder hidden_dim must be at least 1".into()));
    }
    let tc = model.head.training.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);

    let x_static = stage1.static_matrix();
    let y = stage1.targets();
    let static_pred = out_of_fold_static(&model.static_branch, &x_static, &y, tc.static_oof_folds)?;
    let seq_raw = stage1.sequence_matrix();
    if static_pred.iter().chain(seq_raw.iter().flatten()).chain(&y).any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }

    let flat: Vec<f64> = seq_raw.iter().flatten().copied().collect();
    let standardizer = InputStandardizer {
        sequence: ColumnScaler::fit_column(&flat),
        static_prediction: ColumnScaler::fit_column(&static_pred),
        target: ColumnScaler::fit_column(&y),
    };
    let seqs: Vec<[f64; SEQ_LEN]> = seq_raw.iter().map(|s| s.map(|v| standardizer.sequence.transform(v))).collect();
    let s_in: Vec<f64> = static_pred.iter().map(|v| standardizer.static_prediction.transform(*v)).collect();
    let z: Vec<f64> = y.iter().map(|v| standardizer.target.transform(*v)).collect();

    let mut encoder = model.encoder.init(&mut rng);
    let enc_dim = encoder.output_dim();
    let mut net = Mlp::new(enc_dim + 1, dims, model.head.config.activation, &mut rng);

    let t_std = standardizer.target.std;
    let full_pass_mse = |encoder: &FittedEncoder, net: &Mlp| -> f64 {
        let mut sse = 0.0;
        for i in 0..z.len() {
            let mut h = encoder.encode(&seqs[i]);
            h.push(s_in[i]);
            let e = (net.forward(&h)[0] - z[i]) * t_std;
            sse += e * e;
        }
        sse / z.len() as f64
    };

    let mut history = vec![full_pass_mse(&encoder, &net)];
    if !history[0].is_finite() {
        return Err(ModelError::NonFiniteLoss { epoch: 0 });
    }

    let mut opt = Adam::new(tc.learning_rate);
    let mut head_grads = net.zero_grads();
    let mut enc_grads = encoder.zero_grads();
    let mut head_trace = MlpTrace::default();
    let mut enc_trace = EncoderTrace::default();
    let mut order: Vec<usize> = (0..z.len()).collect();
    let batch = tc.batch_size.max(1);
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            head_grads.iter_mut().for_each(|g| g.clear());
            enc_grads.clear();
            for &i in chunk {
                let mut h = encoder.encode_trace(&seqs[i], &mut enc_trace);
                h.push(s_in[i]);
                net.forward_trace(&h, &mut head_trace);
                let out = head_trace.outputs.last().expect("trace has output")[0];
                let grad_in = net.backward(&head_trace, &[2.0 * (out - z[i])], &mut head_grads);
                encoder.backward(&seqs[i], &enc_trace, &grad_in[..enc_dim], &mut enc_grads);
            }
            let grads: Vec<&[f64]> = dense_grad_slices(&head_grads).into_iter().chain(enc_grads.slices()).collect();
            let mut params: Vec<&mut [f64]> = net.params_mut().into_iter().chain(encoder.params_mut()).collect();
            opt.step(&mut params, &grads, 1.0 / chunk.len() as f64);
        }
        let loss = full_pass_mse(&encoder, &net);
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
        history.push(loss);
    }

    model.fitted_encoder = Some(encoder);
    model.head.net = Some(net);
    model.standardizer = Some(standardizer);
    model.loss_history = history;
    Ok(model)
}
