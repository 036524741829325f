//! Shapley attributions for either stage.
//!
//! Features outside a coalition are replaced by the mean of the background
//! rows, so the value of coalition `S` is `f(x_S, r_{-S})` with `r` that mean
//! and the base value is `f(r)`. Exact mode enumerates all `2^F` coalitions;
//! sampled mode averages marginal contributions over random orderings.

use std::cmp::Ordering;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{SEQUENCE_FEATURE_NAMES, STAGE2_FEATURE_NAMES, STATIC_FEATURE_NAMES};
use crate::forecast::{stage2_inputs, AodForecast, ForecastError, IrradianceMode};
use crate::ingestion::MergedDailyRecord;
use crate::models::{joint_inputs, ModelError};
use crate::pipeline::TrainedPipeline;

pub const EXACT_FEATURE_CAP: usize = 12;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("exact Shapley enumeration supports at most {EXACT_FEATURE_CAP} features, got {0}")]
    TooManyFeatures(usize),
    #[error("background set is empty")]
    EmptyBackground,
    #[error("no instances to explain")]
    NoInstances,
    #[error("row has {found} values, expected {expected}")]
    WrongWidth { expected: usize, found: usize },
    #[error("sampled mode needs at least 2 permutations")]
    TooFewPermutations,
    #[error("unknown instance {0}")]
    UnknownInstance(usize),
    #[error("stage must be 1 or 2, got {0}")]
    UnknownStage(u8),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ExplainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ShapleyMode {
    Exact,
    Sampled { n_permutations: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub feature_names: Vec<String>,
    pub mode: ShapleyMode,
    pub base_value: f64,
    /// Model output for each instance.
    pub predictions: Vec<f64>,
    /// Instances × features.
    pub per_instance_phi: Vec<Vec<f64>>,
    /// Standard errors of the sampled estimates; empty in exact mode.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_instance_se: Vec<Vec<f64>>,
    pub mean_abs_phi: Vec<f64>,
    pub std_abs_phi: Vec<f64>,
    /// 1 for the largest mean |φ|; ties go to the lexicographically smaller name.
    pub rank: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub feature: String,
    pub mean_abs_phi: f64,
    pub std_abs_phi: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureContribution {
    pub feature: String,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfallDecomposition {
    pub instance: usize,
    pub base_value: f64,
    pub contributions: Vec<FeatureContribution>,
    pub prediction: f64,
}

fn column_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let mut m = vec![0.0; d];
    for r in rows {
        for (a, v) in m.iter_mut().zip(r) {
            *a += v;
        }
    }
    m.iter_mut().for_each(|v| *v /= rows.len() as f64);
    m
}

fn exact_phi<F>(f: &F, x: &[f64], reference: &[f64], base: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64, ModelError>,
{
    let d = x.len();
    let n_sets = 1usize << d;
    let mut value = vec![0.0; n_sets];
    let mut z = reference.to_vec();
    value[0] = base;
    for (mask, v) in value.iter_mut().enumerate().skip(1) {
        for i in 0..d {
            z[i] = if mask >> i & 1 == 1 { x[i] } else { reference[i] };
        }
        *v = f(&z)?;
    }
    // weight[s] = s!(d-s-1)!/d!
    let mut weight = vec![0.0; d];
    for (s, w) in weight.iter_mut().enumerate() {
        let mut acc = 1.0 / d as f64;
        for k in 1..=s {
            acc *= k as f64 / (d - k) as f64;
        }
        *w = acc;
    }
    let mut phi = vec![0.0; d];
    for mask in 0..n_sets {
        let size = mask.count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if mask >> i & 1 == 0 {
                *p += weight[size] * (value[mask | 1 << i] - value[mask]);
            }
        }
    }
    Ok(phi)
}

fn sampled_phi<F>(f: &F, x: &[f64], reference: &[f64], base: f64, n_perm: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&[f64]) -> Result<f64, ModelError>,
{
    let d = x.len();
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    let mut order: Vec<usize> = (0..d).collect();
    let mut z = reference.to_vec();
    for _ in 0..n_perm {
        order.shuffle(rng);
        z.copy_from_slice(reference);
        let mut prev = base;
        for &i in &order {
            z[i] = x[i];
            let cur = f(&z)?;
            let delta = cur - prev;
            sum[i] += delta;
            sum_sq[i] += delta * delta;
            prev = cur;
        }
    }
    let n = n_perm as f64;
    let phi: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let se = sum_sq
        .iter()
        .zip(&phi)
        .map(|(sq, m)| ((sq / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
        .collect();
    Ok((phi, se))
}

fn by_abs_then_name(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Shapley values of `f` at every row of `x`.
pub fn shapley_values<F>(
    f: F,
    feature_names: &[&str],
    x: &[Vec<f64>],
    background: &[Vec<f64>],
    mode: ShapleyMode,
) -> Result<AttributionReport>
where
    F: Fn(&[f64]) -> Result<f64, ModelError>,
{
    let d = feature_names.len();
    if background.is_empty() {
        return Err(ExplainError::EmptyBackground);
    }
    if x.is_empty() {
        return Err(ExplainError::NoInstances);
    }
    if let Some(bad) = x.iter().chain(background).find(|r| r.len() != d) {
        return Err(ExplainError::WrongWidth {
            expected: d,
            found: bad.len(),
        });
    }
    let reference = column_mean(background);
    let base_value = f(&reference)?;

    let mut per_instance_phi = Vec::with_capacity(x.len());
    let mut per_instance_se = Vec::new();
    let mut predictions = Vec::with_capacity(x.len());
    match mode {
        ShapleyMode::Exact => {
            if d > EXACT_FEATURE_CAP {
                return Err(ExplainError::TooManyFeatures(d));
            }
            for row in x {
                per_instance_phi.push(exact_phi(&f, row, &reference, base_value)?);
                predictions.push(f(row)?);
            }
        }
        ShapleyMode::Sampled { n_permutations, seed } => {
            if n_permutations < 2 {
                return Err(ExplainError::TooFewPermutations);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for row in x {
                let (phi, se) = sampled_phi(&f, row, &reference, base_value, n_permutations, &mut rng)?;
                per_instance_phi.push(phi);
                per_instance_se.push(se);
                predictions.push(f(row)?);
            }
        }
    }

    let n = x.len() as f64;
    let mut mean_abs_phi = vec![0.0; d];
    let mut std_abs_phi = vec![0.0; d];
    for j in 0..d {
        let m = per_instance_phi.iter().map(|p| p[j].abs()).sum::<f64>() / n;
        let var = per_instance_phi.iter().map(|p| (p[j].abs() - m).powi(2)).sum::<f64>() / n;
        mean_abs_phi[j] = m;
        std_abs_phi[j] = var.sqrt();
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| by_abs_then_name((mean_abs_phi[a], feature_names[a]), (mean_abs_phi[b], feature_names[b])));
    let mut rank = vec![0; d];
    for (r, &j) in order.iter().enumerate() {
        rank[j] = r + 1;
    }

    Ok(AttributionReport {
        feature_names: feature_names.iter().map(|s| s.to_string()).collect(),
        mode,
        base_value,
        predictions,
        per_instance_phi,
        per_instance_se,
        mean_abs_phi,
        std_abs_phi,
        rank,
    })
}

/// Per-feature summary ordered by rank.
pub fn attribution_summary(report: &AttributionReport) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = (0..report.feature_names.len())
        .map(|j| SummaryRow {
            feature: report.feature_names[j].clone(),
            mean_abs_phi: report.mean_abs_phi[j],
            std_abs_phi: report.std_abs_phi[j],
            rank: report.rank[j],
        })
        .collect();
    rows.sort_by_key(|r| r.rank);
    rows
}

pub fn write_summary_csv<W: Write>(out: W, report: &AttributionReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature", "mean_abs_phi", "std", "rank"])?;
    for r in attribution_summary(report) {
        w.write_record([r.feature, r.mean_abs_phi.to_string(), r.std_abs_phi.to_string(), r.rank.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn waterfall_decomposition(report: &AttributionReport, instance: usize) -> Result<WaterfallDecomposition> {
    let phi = report
        .per_instance_phi
        .get(instance)
        .ok_or(ExplainError::UnknownInstance(instance))?;
    let mut contributions: Vec<FeatureContribution> = report
        .feature_names
        .iter()
        .zip(phi)
        .map(|(name, p)| FeatureContribution {
            feature: name.clone(),
            phi: *p,
        })
        .collect();
    contributions.sort_by(|a, b| by_abs_then_name((a.phi.abs(), &a.feature), (b.phi.abs(), &b.feature)));
    Ok(WaterfallDecomposition {
        instance,
        base_value: report.base_value,
        contributions,
        prediction: report.predictions[instance],
    })
}

/// Names of the ten joint stage-1 inputs.
pub fn stage1_feature_names() -> Vec<&'static str> {
    STATIC_FEATURE_NAMES.iter().chain(&SEQUENCE_FEATURE_NAMES).copied().collect()
}

/// Attributions of the stage-1 output (before clamping) to its ten inputs.
pub fn explain_stage1(pipeline: &TrainedPipeline, rows: &[Vec<f64>], background: &[Vec<f64>], mode: ShapleyMode) -> Result<AttributionReport> {
    shapley_values(|z| pipeline.stage1.predict_raw(z), &stage1_feature_names(), rows, background, mode)
}

pub fn explain_stage2(pipeline: &TrainedPipeline, rows: &[Vec<f64>], background: &[Vec<f64>], mode: ShapleyMode) -> Result<AttributionReport> {
    shapley_values(|z| pipeline.stage2.predict(z), &STAGE2_FEATURE_NAMES, rows, background, mode)
}

/// Stage-1 rows built from curated records (needs seven prior days per row).
pub fn stage1_rows_from_history(history: &[MergedDailyRecord]) -> Vec<Vec<f64>> {
    let aod: Vec<f64> = history.iter().map(|r| r.aod).collect();
    (crate::features::STAGE1_WARMUP..history.len())
        .filter_map(|t| {
            let seq = crate::features::SequenceFeatures::from_history(&aod[..t])?;
            let s = crate::features::StaticFeatures::from_record(&history[t]);
            Some(joint_inputs(&s, &seq).to_vec())
        })
        .collect()
}

/// Stage-2 rows from curated records, with observed AOD in the prediction slot.
pub fn stage2_rows_from_history(history: &[MergedDailyRecord]) -> Vec<Vec<f64>> {
    history
        .iter()
        .map(|r| {
            let mut v = vec![r.aod, r.irradiance_actual, r.irradiance_clear_sky];
            v.extend_from_slice(&crate::features::StaticFeatures::from_record(r).to_array());
            v
        })
        .collect()
}

/// Attributes each day of a forecast, against the pipeline's stored history.
pub fn explain_forecast(
    pipeline: &TrainedPipeline,
    forecast: &AodForecast,
    stage: u8,
    irradiance: IrradianceMode,
    mode: ShapleyMode,
) -> Result<AttributionReport> {
    match stage {
        1 => {
            let rows: Vec<Vec<f64>> = forecast
                .inputs_log
                .iter()
                .map(|s| joint_inputs(&s.static_features, &s.sequence).to_vec())
                .collect();
            explain_stage1(pipeline, &rows, &stage1_rows_from_history(&pipeline.history), mode)
        }
        2 => {
            let last = pipeline.history.last().ok_or(ExplainError::EmptyBackground)?;
            let rows = stage2_inputs(forecast, last, irradiance)?;
            explain_stage2(pipeline, &rows, &stage2_rows_from_history(&pipeline.history), mode)
        }
        s => Err(ExplainError::UnknownStage(s)),
    }
}
