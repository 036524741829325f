//! End-to-end training: curated records in, fitted stage-1 and stage-2
//! models plus hold-out metrics out.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::features::{assemble_datasets, Stage1Dataset, Stage2Dataset, STAGE1_WARMUP};
use crate::ingestion::MergedDailyRecord;
use crate::models::{
    evaluate_metrics, fit_efficiency_regressor, predict_aod, EncoderKind, GbtParams, HeadConfig, HybridAodModel, MetricsReport, ModelError,
    RegressorConfig, SequenceEncoder, StaticRegressor, TrainingConfig,
};
use crate::Error;

/// Which stage-1 values stand in for `predicted_aod` when fitting stage 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Stage2Inputs {
    /// Predictions from hybrids refitted on blocked folds that exclude the row.
    OutOfFold { folds: usize },
    /// The final hybrid's own predictions on its training rows.
    InSample,
    /// Observed AOD.
    Observed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub test_fraction: f64,
    pub stage1_static: RegressorConfig,
    pub encoder: SequenceEncoder,
    pub head: HeadConfig,
    pub training: TrainingConfig,
    pub stage2: RegressorConfig,
    pub stage2_inputs: Stage2Inputs,
    /// Trailing records kept with the fitted pipeline as forecast history.
    pub history_days: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            test_fraction: 0.2,
            stage1_static: RegressorConfig::default(),
            encoder: SequenceEncoder::default(),
            head: HeadConfig::default(),
            training: TrainingConfig::default(),
            stage2: RegressorConfig::default(),
            stage2_inputs: Stage2Inputs::OutOfFold { folds: 5 },
            history_days: 60,
        }
    }
}

impl PipelineConfig {
    /// Smaller models and fewer epochs, for smoke runs and tests.
    pub fn quick() -> Self {
        Self {
            stage1_static: RegressorConfig::GradientBoostedTrees(GbtParams {
                n_estimators: 80,
                learning_rate: 0.1,
                ..GbtParams::default()
            }),
            encoder: SequenceEncoder {
                kind: EncoderKind::LinearAutoregressive,
                hidden_dim: 8,
            },
            training: TrainingConfig {
                epochs: 15,
                learning_rate: 3e-3,
                static_oof_folds: 0,
                ..TrainingConfig::default()
            },
            stage2: RegressorConfig::GradientBoostedTrees(GbtParams {
                n_estimators: 80,
                learning_rate: 0.1,
                ..GbtParams::default()
            }),
            stage2_inputs: Stage2Inputs::InSample,
            ..Self::default()
        }
    }

    fn hybrid(&self) -> HybridAodModel {
        HybridAodModel::new(
            self.stage1_static.clone().with_seed(self.seed),
            self.encoder,
            self.head.clone(),
            TrainingConfig {
                seed: self.seed,
                ..self.training.clone()
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub stage1: MetricsReport,
    pub stage2: MetricsReport,
    pub train_start: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
    pub stage1_train_rows: usize,
    pub stage2_train_rows: usize,
    pub stage1_loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPipeline {
    pub config: PipelineConfig,
    pub stage1: HybridAodModel,
    pub stage2: StaticRegressor,
    pub report: TrainingReport,
    /// Most recent curated records, the starting point for forecasts.
    pub history: Vec<MergedDailyRecord>,
}

fn predict_rows(model: &HybridAodModel, ds: &Stage1Dataset) -> Result<Vec<f64>, ModelError> {
    ds.rows
        .iter()
        .map(|r| predict_aod(model, &r.static_features, &r.sequence).map(|p| p.value))
        .collect()
}

fn stage2_training_inputs(
    config: &PipelineConfig,
    model: &HybridAodModel,
    train: &Stage1Dataset,
) -> Result<Vec<f64>, Error> {
    Ok(match config.stage2_inputs {
        Stage2Inputs::Observed => train.targets(),
        Stage2Inputs::InSample => predict_rows(model, train)?,
        Stage2Inputs::OutOfFold { folds } => {
            let n = train.len();
            if folds < 2 || n - n.div_ceil(folds) < 10 * STAGE1_WARMUP {
                return Ok(predict_rows(model, train)?);
            }
            let mut out = Vec::with_capacity(n);
            for k in 0..folds {
                let (lo, hi) = (k * n / folds, (k + 1) * n / folds);
                let rest = Stage1Dataset {
                    rows: train.rows[..lo].iter().chain(&train.rows[hi..]).cloned().collect(),
                };
                let held = Stage1Dataset {
                    rows: train.rows[lo..hi].to_vec(),
                };
                let fold_model = config.hybrid().fit(&rest)?;
                out.extend(predict_rows(&fold_model, &held)?);
            }
            out
        }
    })
}

/// Fits both stages on the leading `1 − test_fraction` of the records and
/// scores them on the rest.
pub fn train_pipeline(records: &[MergedDailyRecord], config: &PipelineConfig) -> Result<TrainedPipeline, Error> {
    let assembled = assemble_datasets(records, None)?;
    let (train1, test1) = assembled.stage1.split(config.test_fraction)?;
    let stage1 = config.hybrid().fit(&train1)?;

    let test_pred = predict_rows(&stage1, &test1)?;
    let stage1_metrics = evaluate_metrics(&test1.targets(), &test_pred)?;

    let train_pred = stage2_training_inputs(config, &stage1, &train1)?;
    let predictions: BTreeMap<NaiveDate, f64> = train1
        .rows
        .iter()
        .zip(train_pred)
        .chain(test1.rows.iter().zip(test_pred))
        .map(|(r, p)| (r.date, p))
        .collect();
    let stage2_ds = assemble_datasets(records, Some(&predictions))?.stage2;

    let test_start = test1.rows[0].date;
    let test_end = test1.rows[test1.len() - 1].date;
    let train_start = train1.rows[0].date;
    let train2 = stage2_ds.between(train_start, test_start.pred_opt().expect("date in range"));
    let test2 = stage2_ds.between(test_start, test_end);
    let stage2 = fit_efficiency_regressor(StaticRegressor::new(config.stage2.clone().with_seed(config.seed)), &train2)?;
    let stage2_metrics = evaluate_metrics(&test2.targets(), &stage2.predict_many(&test2.feature_matrix())?)?;

    let keep = config.history_days.max(STAGE1_WARMUP).min(records.len());
    Ok(TrainedPipeline {
        config: config.clone(),
        report: TrainingReport {
            stage1: stage1_metrics,
            stage2: stage2_metrics,
            train_start,
            test_start,
            test_end,
            stage1_train_rows: train1.len(),
            stage2_train_rows: train2.len(),
            stage1_loss_history: stage1.loss_history.clone(),
        },
        stage1,
        stage2,
        history: records[records.len() - keep..].to_vec(),
    })
}

/// Stage-2 rows over `records`, with `predicted_aod` from the fitted stage-1 model.
pub fn predicted_stage2_dataset(pipeline: &TrainedPipeline, records: &[MergedDailyRecord]) -> Result<Stage2Dataset, Error> {
    let stage1 = assemble_datasets(records, None)?.stage1;
    let predictions: BTreeMap<NaiveDate, f64> = stage1
        .rows
        .iter()
        .zip(predict_rows(&pipeline.stage1, &stage1)?)
        .map(|(r, p)| (r.date, p))
        .collect();
    Ok(assemble_datasets(records, Some(&predictions))?.stage2)
}
