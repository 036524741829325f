//! Regressors for both pipeline stages, the hybrid stage-1 AOD model and
//! evaluation metrics.

mod baseline;
mod forest;
mod gbt;
mod hybrid;
mod linear;
mod metrics;
mod mlp;
pub mod nn;
mod scaling;
mod svr;
pub mod tree;

pub use baseline::{baseline_configs, run_baseline_comparison, BaselineRow, BaselineTable, BASELINE_CSV_HEADER};
pub use forest::{ForestModel, ForestParams};
pub use gbt::{GbtModel, GbtParams};
pub use hybrid::{
    fit_sequence_fusion, joint_inputs, predict_aod, AodPrediction, EncoderKind, FittedEncoder, FusionHead, HeadConfig,
    HybridAodModel, InputStandardizer, SequenceEncoder, TrainingConfig,
};
pub use linear::{LinearModel, LinearParams};
pub use metrics::{evaluate_metrics, MetricsReport};
pub use mlp::{MlpModel, MlpParams};
pub use scaling::{ColumnScaler, ScalarScaler};
pub use svr::{SvrModel, SvrParams};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, Stage2Dataset};

/// Fewest rows a regressor will be fitted on.
pub const MIN_TRAINING_ROWS: usize = 10;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{rows} feature rows but {targets} targets")]
    ShapeMismatch { rows: usize, targets: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("feature rows must have {expected} columns, found {found}")]
    WrongWidth { expected: usize, found: usize },
    #[error("unknown model family `{0}`")]
    UnknownFamily(String),
    #[error("{0} is not fitted")]
    NotFitted(&'static str),
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("non-finite value in training data")]
    NonFiniteInput,
    #[error("{0} dataset is empty")]
    EmptyDataset(&'static str),
    #[error("baseline comparison needs at least 2 families, got {0}")]
    TooFewFamilies(usize),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    GradientBoostedTrees,
    Linear,
    RandomForest,
    SupportVector,
    MultilayerPerceptron,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 5] = [
        ModelFamily::Linear,
        ModelFamily::RandomForest,
        ModelFamily::SupportVector,
        ModelFamily::MultilayerPerceptron,
        ModelFamily::GradientBoostedTrees,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::GradientBoostedTrees => "gradient-boosted-trees",
            ModelFamily::Linear => "linear",
            ModelFamily::RandomForest => "random-forest",
            ModelFamily::SupportVector => "support-vector",
            ModelFamily::MultilayerPerceptron => "multilayer-perceptron",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelFamily {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Ok(match key.as_str() {
            "gradient-boosted-trees" | "gbt" | "xgboost" => ModelFamily::GradientBoostedTrees,
            "linear" | "linear-regression" | "ols" => ModelFamily::Linear,
            "random-forest" | "rf" | "forest" => ModelFamily::RandomForest,
            "support-vector" | "svm" | "svr" => ModelFamily::SupportVector,
            "multilayer-perceptron" | "mlp" => ModelFamily::MultilayerPerceptron,
            _ => return Err(ModelError::UnknownFamily(s.to_string())),
        })
    }
}

/// Family plus hyperparameters, tagged by family name when serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum RegressorConfig {
    GradientBoostedTrees(GbtParams),
    Linear(LinearParams),
    RandomForest(ForestParams),
    SupportVector(SvrParams),
    MultilayerPerceptron(MlpParams),
}

impl RegressorConfig {
    pub fn default_for(family: ModelFamily) -> Self {
        match family {
            ModelFamily::GradientBoostedTrees => Self::GradientBoostedTrees(GbtParams::default()),
            ModelFamily::Linear => Self::Linear(LinearParams::default()),
            ModelFamily::RandomForest => Self::RandomForest(ForestParams::default()),
            ModelFamily::SupportVector => Self::SupportVector(SvrParams::default()),
            ModelFamily::MultilayerPerceptron => Self::MultilayerPerceptron(MlpParams::default()),
        }
    }

    pub fn family(&self) -> ModelFamily {
        match self {
            Self::GradientBoostedTrees(_) => ModelFamily::GradientBoostedTrees,
            Self::Linear(_) => ModelFamily::Linear,
            Self::RandomForest(_) => ModelFamily::RandomForest,
            Self::SupportVector(_) => ModelFamily::SupportVector,
            Self::MultilayerPerceptron(_) => ModelFamily::MultilayerPerceptron,
        }
    }

    /// Replaces the seed of stochastic families; others are unchanged.
    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            Self::GradientBoostedTrees(p) => p.seed = seed,
            Self::RandomForest(p) => p.seed = seed,
            Self::MultilayerPerceptron(p) => p.seed = seed,
            Self::Linear(_) | Self::SupportVector(_) => {}
        }
        self
    }
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self::default_for(ModelFamily::GradientBoostedTrees)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum FittedRegressor {
    GradientBoostedTrees(GbtModel),
    Linear(LinearModel),
    RandomForest(ForestModel),
    SupportVector(SvrModel),
    MultilayerPerceptron(MlpModel),
}

impl FittedRegressor {
    pub fn predict(&self, row: &[f64]) -> f64 {
        match self {
            Self::GradientBoostedTrees(m) => m.predict(row),
            Self::Linear(m) => m.predict(row),
            Self::RandomForest(m) => m.predict(row),
            Self::SupportVector(m) => m.predict(row),
            Self::MultilayerPerceptron(m) => m.predict(row),
        }
    }
}

/// A tabular regressor: configuration plus, once fitted, its learned state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticRegressor {
    pub config: RegressorConfig,
    /// Column count seen at fit time.
    pub n_features: Option<usize>,
    fitted: Option<FittedRegressor>,
}

impl StaticRegressor {
    pub fn new(config: RegressorConfig) -> Self {
        Self {
            config,
            n_features: None,
            fitted: None,
        }
    }

    pub fn from_family(family: ModelFamily) -> Self {
        Self::new(RegressorConfig::default_for(family))
    }

    pub fn from_fitted(config: RegressorConfig, n_features: usize, fitted: FittedRegressor) -> Self {
        Self {
            config,
            n_features: Some(n_features),
            fitted: Some(fitted),
        }
    }

    pub fn family(&self) -> ModelFamily {
        self.config.family()
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted.is_some()
    }

    pub fn fitted(&self) -> Option<&FittedRegressor> {
        self.fitted.as_ref()
    }

    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        let (Some(m), Some(d)) = (&self.fitted, self.n_features) else {
            return Err(ModelError::NotFitted("static regressor"));
        };
        if row.len() != d {
            return Err(ModelError::WrongWidth {
                expected: d,
                found: row.len(),
            });
        }
        Ok(m.predict(row))
    }

    pub fn predict_many(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.predict(r)).collect()
    }
}

/// Fits a regressor with squared-error loss. Deterministic for a given seed.
pub fn fit_static_regressor(mut model: StaticRegressor, x: &[Vec<f64>], y: &[f64]) -> Result<StaticRegressor> {
    if x.len() != y.len() {
        return Err(ModelError::ShapeMismatch {
            rows: x.len(),
            targets: y.len(),
        });
    }
    if x.len() < MIN_TRAINING_ROWS {
        return Err(ModelError::TooFewSamples {
            needed: MIN_TRAINING_ROWS,
            got: x.len(),
        });
    }
    let d = x[0].len();
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(ModelError::WrongWidth {
            expected: d,
            found: bad.len(),
        });
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    let fitted = match &model.config {
        RegressorConfig::GradientBoostedTrees(p) => FittedRegressor::GradientBoostedTrees(GbtModel::fit(p, x, y)),
        RegressorConfig::Linear(p) => FittedRegressor::Linear(LinearModel::fit(p, x, y)),
        RegressorConfig::RandomForest(p) => FittedRegressor::RandomForest(ForestModel::fit(p, x, y)),
        RegressorConfig::SupportVector(p) => FittedRegressor::SupportVector(SvrModel::fit(p, x, y)),
        RegressorConfig::MultilayerPerceptron(p) => FittedRegressor::MultilayerPerceptron(MlpModel::fit(p, x, y)),
    };
    model.fitted = Some(fitted);
    model.n_features = Some(d);
    Ok(model)
}

/// Fits the stage-2 efficiency-loss regressor over the nine stage-2 features.
pub fn fit_efficiency_regressor(model: StaticRegressor, stage2: &Stage2Dataset) -> Result<StaticRegressor> {
    if stage2.is_empty() {
        return Err(ModelError::EmptyDataset("stage-2"));
    }
    fit_static_regressor(model, &stage2.feature_matrix(), &stage2.targets())
}
