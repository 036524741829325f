//! Recursive multi-day AOD projection, chaining into efficiency loss, and
//! what-if scenarios.

use std::io::Write;

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{SequenceFeatures, StaticFeatures, STAGE1_WARMUP};
use crate::ingestion::MergedDailyRecord;
use crate::models::{predict_aod, AodPrediction, HybridAodModel, ModelError, StaticRegressor};
use crate::physics::{self, PhysicsError};
use crate::pipeline::TrainedPipeline;

pub const DEFAULT_HORIZON: usize = 30;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("need at least {needed} days of history, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("horizon must be at least 1 day")]
    InvalidHorizon,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("forecast arrays disagree in length")]
    LengthMismatch,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ForecastError> = std::result::Result<T, E>;

/// Anything that maps one day's static and sequence features to AOD.
pub trait AodModel {
    fn predict_aod(&self, static_features: &StaticFeatures, sequence: &SequenceFeatures) -> Result<AodPrediction, ModelError>;
}

impl AodModel for HybridAodModel {
    fn predict_aod(&self, static_features: &StaticFeatures, sequence: &SequenceFeatures) -> Result<AodPrediction, ModelError> {
        predict_aod(self, static_features, sequence)
    }
}

/// Maps the nine stage-2 features to efficiency loss in percent.
pub trait EfficiencyModel {
    fn predict_loss(&self, features: &[f64]) -> Result<f64, ModelError>;
}

impl EfficiencyModel for StaticRegressor {
    fn predict_loss(&self, features: &[f64]) -> Result<f64, ModelError> {
        self.predict(features)
    }
}

/// Inputs actually fed to the model at one recursion step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInputs {
    pub date: NaiveDate,
    pub static_features: StaticFeatures,
    pub sequence: SequenceFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AodForecast {
    pub start_date: NaiveDate,
    pub horizon_days: usize,
    pub values: Vec<f64>,
    /// Days on which the raw model output was negative and clamped to 0.
    pub clamped: Vec<bool>,
    pub inputs_log: Vec<StepInputs>,
}

impl AodForecast {
    pub fn dates(&self) -> Vec<NaiveDate> {
        self.inputs_log.iter().map(|s| s.date).collect()
    }
}

fn with_month(s: StaticFeatures, date: NaiveDate) -> StaticFeatures {
    StaticFeatures {
        month: date.month(),
        ..s
    }
}

/// Predicts `horizon` days past the end of `history`, feeding each
/// prediction back into the lag and rolling-mean window.
///
/// Meteorology stays at the last observed day; the month follows the
/// forecast calendar.
pub fn recursive_aod_forecast<M: AodModel + ?Sized>(
    model: &M,
    history: &[MergedDailyRecord],
    horizon: usize,
) -> Result<AodForecast> {
    if history.len() < STAGE1_WARMUP {
        return Err(ForecastError::InsufficientHistory {
            needed: STAGE1_WARMUP,
            got: history.len(),
        });
    }
    if horizon == 0 {
        return Err(ForecastError::InvalidHorizon);
    }
    let last = &history[history.len() - 1];
    let base_static = StaticFeatures::from_record(last);
    let mut window: Vec<f64> = history[history.len() - STAGE1_WARMUP..].iter().map(|r| r.aod).collect();
    let start_date = last.date + Days::new(1);

    let mut values = Vec::with_capacity(horizon);
    let mut clamped = Vec::with_capacity(horizon);
    let mut inputs_log = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let date = start_date + Days::new(k as u64);
        let sequence = SequenceFeatures::from_history(&window).expect("window holds seven values");
        let static_features = with_month(base_static, date);
        let p = model.predict_aod(&static_features, &sequence)?;
        values.push(p.value);
        clamped.push(p.clamped);
        inputs_log.push(StepInputs {
            date,
            static_features,
            sequence,
        });
        window.remove(0);
        window.push(p.value);
    }
    Ok(AodForecast {
        start_date,
        horizon_days: horizon,
        values,
        clamped,
        inputs_log,
    })
}

/// Re-evaluates the model on the logged inputs.
pub fn replay_inputs_log<M: AodModel + ?Sized>(model: &M, forecast: &AodForecast) -> Result<Vec<f64>> {
    forecast
        .inputs_log
        .iter()
        .map(|s| Ok(model.predict_aod(&s.static_features, &s.sequence)?.value))
        .collect()
}

/// How stage-2 irradiance inputs evolve over the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum IrradianceMode {
    /// Both irradiances stay at the last observation.
    #[default]
    HoldLast,
    /// Clear-sky irradiance stays at the last observation; actual irradiance
    /// is attenuated by the forecast AOD at the noon air mass for `latitude`.
    BeerLambert { latitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    /// Added to every temperature value, °C.
    pub delta_t2m: f64,
    /// Multiplies every AOD value before features are rebuilt.
    pub aod_multiplier: f64,
    #[serde(default)]
    pub label: String,
}

impl ScenarioSpec {
    pub fn new(delta_t2m: f64, aod_multiplier: f64, label: impl Into<String>) -> Result<Self> {
        let s = Self {
            delta_t2m,
            aod_multiplier,
            label: label.into(),
        };
        s.validate()?;
        Ok(s)
    }

    /// +1.5 °C and +20 % AOD.
    pub fn stress_preset() -> Self {
        Self {
            delta_t2m: 1.5,
            aod_multiplier: 1.2,
            label: "paper".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delta_t2m.is_finite() {
            return Err(ForecastError::InvalidScenario("delta_t2m must be finite".into()));
        }
        if !(self.aod_multiplier.is_finite() && self.aod_multiplier > 0.0) {
            return Err(ForecastError::InvalidScenario(format!(
                "aod_multiplier must be positive, got {}",
                self.aod_multiplier
            )));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.delta_t2m == 0.0 && self.aod_multiplier == 1.0
    }
}

/// Shifts temperature and scales AOD on a copy of `records`.
pub fn apply_scenario(records: &[MergedDailyRecord], spec: &ScenarioSpec) -> Result<Vec<MergedDailyRecord>> {
    spec.validate()?;
    Ok(records
        .iter()
        .map(|r| MergedDailyRecord {
            t2m: r.t2m + spec.delta_t2m,
            aod: r.aod * spec.aod_multiplier,
            ..r.clone()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ForecastExport", try_from = "ForecastExport")]
pub struct PipelineForecast {
    pub aod: AodForecast,
    pub efficiency_loss_pct: Vec<f64>,
    /// Days on which the predicted loss fell outside [0, 100] and was clamped.
    pub loss_clamped: Vec<bool>,
    pub solar_efficiency_pct: Vec<f64>,
    pub scenario: Option<ScenarioSpec>,
}

/// Flat JSON layout of a [`PipelineForecast`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastExport {
    pub start_date: NaiveDate,
    pub horizon: usize,
    pub dates: Vec<NaiveDate>,
    pub aod: Vec<f64>,
    pub aod_clamped: Vec<bool>,
    pub efficiency_loss_pct: Vec<f64>,
    pub loss_clamped: Vec<bool>,
    pub solar_efficiency_pct: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSpec>,
    pub inputs_log: Vec<StepInputs>,
}

impl From<PipelineForecast> for ForecastExport {
    fn from(f: PipelineForecast) -> Self {
        Self {
            start_date: f.aod.start_date,
            horizon: f.aod.horizon_days,
            dates: f.aod.dates(),
            aod: f.aod.values,
            aod_clamped: f.aod.clamped,
            efficiency_loss_pct: f.efficiency_loss_pct,
            loss_clamped: f.loss_clamped,
            solar_efficiency_pct: f.solar_efficiency_pct,
            scenario: f.scenario,
            inputs_log: f.aod.inputs_log,
        }
    }
}

impl TryFrom<ForecastExport> for PipelineForecast {
    type Error = ForecastError;

    fn try_from(e: ForecastExport) -> Result<Self> {
        let n = e.horizon;
        let lens = [
            e.dates.len(),
            e.aod.len(),
            e.aod_clamped.len(),
            e.efficiency_loss_pct.len(),
            e.loss_clamped.len(),
            e.solar_efficiency_pct.len(),
            e.inputs_log.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(ForecastError::LengthMismatch);
        }
        Ok(Self {
            aod: AodForecast {
                start_date: e.start_date,
                horizon_days: n,
                values: e.aod,
                clamped: e.aod_clamped,
                inputs_log: e.inputs_log,
            },
            efficiency_loss_pct: e.efficiency_loss_pct,
            loss_clamped: e.loss_clamped,
            solar_efficiency_pct: e.solar_efficiency_pct,
            scenario: e.scenario,
        })
    }
}

impl PipelineForecast {
    pub fn horizon(&self) -> usize {
        self.aod.horizon_days
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "aod", "efficiency_loss_pct", "solar_efficiency_pct"])?;
        for (i, step) in self.aod.inputs_log.iter().enumerate() {
            w.write_record([
                step.date.to_string(),
                self.aod.values[i].to_string(),
                self.efficiency_loss_pct[i].to_string(),
                self.solar_efficiency_pct[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Stage-2 feature rows for each forecast day.
pub fn stage2_inputs(aod_fc: &AodForecast, last_record: &MergedDailyRecord, irradiance: IrradianceMode) -> Result<Vec<Vec<f64>>> {
    let clear = last_record.irradiance_clear_sky;
    aod_fc
        .values
        .iter()
        .zip(&aod_fc.inputs_log)
        .map(|(aod, step)| {
            let actual = match irradiance {
                IrradianceMode::HoldLast => last_record.irradiance_actual,
                IrradianceMode::BeerLambert { latitude } => {
                    let m = physics::daily_air_mass(latitude, step.date.ordinal())?;
                    physics::attenuate_irradiance(clear, *aod, m)?
                }
            };
            let mut features = vec![*aod, actual, clear];
            features.extend_from_slice(&step.static_features.to_array()[..5]);
            features.push(step.date.month() as f64);
            Ok(features)
        })
        .collect()
}

/// Predicts efficiency loss for each forecast day.
pub fn chain_efficiency_forecast<E: EfficiencyModel + ?Sized>(
    aod_fc: AodForecast,
    eff_model: &E,
    last_record: &MergedDailyRecord,
    irradiance: IrradianceMode,
) -> Result<PipelineForecast> {
    let rows = stage2_inputs(&aod_fc, last_record, irradiance)?;
    let mut efficiency_loss_pct = Vec::with_capacity(rows.len());
    let mut loss_clamped = Vec::with_capacity(rows.len());
    let mut solar_efficiency_pct = Vec::with_capacity(rows.len());
    for features in &rows {
        let raw = eff_model.predict_loss(features)?;
        let loss = raw.clamp(0.0, 100.0);
        efficiency_loss_pct.push(loss);
        loss_clamped.push(loss != raw);
        solar_efficiency_pct.push(physics::solar_efficiency_pct(loss)?);
    }
    Ok(PipelineForecast {
        aod: aod_fc,
        efficiency_loss_pct,
        loss_clamped,
        solar_efficiency_pct,
        scenario: None,
    })
}

/// Full two-stage forecast from a trained pipeline's stored history.
///
/// An identity scenario is treated as no scenario.
pub fn forecast_pipeline(
    pipeline: &TrainedPipeline,
    horizon: usize,
    scenario: Option<&ScenarioSpec>,
    irradiance: IrradianceMode,
) -> Result<PipelineForecast> {
    let scenario = scenario.filter(|s| !s.is_identity());
    let history = match scenario {
        Some(s) => apply_scenario(&pipeline.history, s)?,
        None => pipeline.history.clone(),
    };
    let aod = recursive_aod_forecast(&pipeline.stage1, &history, horizon)?;
    let last = history.last().expect("history checked non-empty");
    let mut out = chain_efficiency_forecast(aod, &pipeline.stage2, last, irradiance)?;
    out.scenario = scenario.cloned();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioComparison {
    pub baseline: PipelineForecast,
    pub scenario: PipelineForecast,
    /// Scenario minus baseline, per day.
    pub aod_delta: Vec<f64>,
    pub efficiency_loss_delta: Vec<f64>,
    pub mean_efficiency_loss_delta: f64,
}

pub fn compare_scenario(baseline: PipelineForecast, scenario: PipelineForecast) -> Result<ScenarioComparison> {
    if baseline.horizon() != scenario.horizon() {
        return Err(ForecastError::LengthMismatch);
    }
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(s, b)| s - b).collect::<Vec<f64>>();
    let aod_delta = diff(&scenario.aod.values, &baseline.aod.values);
    let efficiency_loss_delta = diff(&scenario.efficiency_loss_pct, &baseline.efficiency_loss_pct);
    let mean_efficiency_loss_delta = efficiency_loss_delta.iter().sum::<f64>() / efficiency_loss_delta.len() as f64;
    Ok(ScenarioComparison {
        baseline,
        scenario,
        aod_delta,
        efficiency_loss_delta,
        mean_efficiency_loss_delta,
    })
}
