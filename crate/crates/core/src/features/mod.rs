//! Temporal feature engineering and the two stage datasets.
//!
//! Stage 1 predicts same-day AOD from meteorology plus a short AOD history.
//! The history for target day `t` is the input vector of the one-step
//! recursion: `[AOD(t-2), AOD(t-1), roll3(t-1), roll7(t-1)]`, where `roll_n`
//! is a trailing mean that includes its own day. Nothing observed on day `t`
//! itself enters the sequence branch, so training rows and recursive
//! forecasting steps are built identically.

mod analysis;
mod datasets;

pub use analysis::{pearson_matrix, seasonal_strength, CorrelationMatrix, CORRELATION_COLUMNS};
pub use datasets::{
    assemble_datasets, read_stage2_csv, write_stage1_csv, write_stage2_csv, AssembledDatasets,
    Stage1Dataset, Stage1Row, Stage2Dataset, Stage2Row, STAGE1_CSV_HEADER, STAGE2_CSV_HEADER,
};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STATIC_FEATURE_NAMES: [&str; 6] = ["t2m", "t2mdew", "ws2m", "qv2m", "ps", "month"];
/// Order in which the sequence encoder sees the engineered AOD values.
pub const SEQUENCE_FEATURE_NAMES: [&str; 4] = ["aod_lag2", "aod_lag1", "aod_roll3", "aod_roll7"];
pub const STAGE2_FEATURE_NAMES: [&str; 9] = [
    "predicted_aod",
    "irr_actual",
    "irr_clear",
    "t2m",
    "t2mdew",
    "ws2m",
    "qv2m",
    "ps",
    "month",
];

/// Longest look-back needed by a stage-1 row: `roll7` ending the day before.
pub const STAGE1_WARMUP: usize = 7;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("series too short: need at least {needed} values, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("rolling window must be at least 1")]
    InvalidWindow,
    #[error("test fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("split of {n} rows at fraction {fraction} leaves an empty side")]
    DegenerateSplit { n: usize, fraction: f64 },
    #[error("records must be consecutive days; {prev} is followed by {next}")]
    NonConsecutiveDates { prev: NaiveDate, next: NaiveDate },
    #[error("{0} dataset is empty after dropping incomplete rows")]
    EmptyDataset(&'static str),
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("invalid value in column `{column}` at line {line}: {reason}")]
    InvalidValue {
        column: String,
        line: u64,
        reason: String,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = FeatureError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticFeatures {
    pub t2m: f64,
    pub t2mdew: f64,
    pub ws2m: f64,
    pub qv2m: f64,
    pub ps: f64,
    pub month: u32,
}

impl StaticFeatures {
    pub fn from_record(r: &crate::ingestion::MergedDailyRecord) -> Self {
        Self {
            t2m: r.t2m,
            t2mdew: r.t2mdew,
            ws2m: r.ws2m,
            qv2m: r.qv2m,
            ps: r.ps,
            month: r.date.month(),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.t2m, self.t2mdew, self.ws2m, self.qv2m, self.ps, self.month as f64]
    }

    /// Inverse of [`to_array`](Self::to_array); month is rounded and clamped to 1–12.
    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            t2m: v[0],
            t2mdew: v[1],
            ws2m: v[2],
            qv2m: v[3],
            ps: v[4],
            month: (v[5].round().clamp(1.0, 12.0)) as u32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceFeatures {
    pub aod_lag1: f64,
    pub aod_lag2: f64,
    pub aod_roll3: f64,
    pub aod_roll7: f64,
}

impl SequenceFeatures {
    /// Builds the features for the day after the end of `history`.
    ///
    /// Returns `None` when fewer than seven values are available.
    pub fn from_history(history: &[f64]) -> Option<Self> {
        let n = history.len();
        if n < STAGE1_WARMUP {
            return None;
        }
        let mean = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
        Some(Self {
            aod_lag1: history[n - 1],
            aod_lag2: history[n - 2],
            aod_roll3: mean(&history[n - 3..]),
            aod_roll7: mean(&history[n - 7..]),
        })
    }

    /// Values in encoder order: lag2, lag1, roll3, roll7.
    pub fn to_array(&self) -> [f64; 4] {
        [self.aod_lag2, self.aod_lag1, self.aod_roll3, self.aod_roll7]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            aod_lag2: v[0],
            aod_lag1: v[1],
            aod_roll3: v[2],
            aod_roll7: v[3],
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            aod_lag1: self.aod_lag1 * factor,
            aod_lag2: self.aod_lag2 * factor,
            aod_roll3: self.aod_roll3 * factor,
            aod_roll7: self.aod_roll7 * factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagFeatures {
    pub lag1: f64,
    pub lag2: f64,
}

/// `lag1(t) = x(t-1)`, `lag2(t) = x(t-2)`, aligned with the input; the first two entries are `None`.
pub fn make_lag_features(series: &[f64]) -> Result<Vec<Option<LagFeatures>>> {
    if series.len() < 3 {
        return Err(FeatureError::SeriesTooShort {
            needed: 3,
            got: series.len(),
        });
    }
    Ok((0..series.len())
        .map(|t| {
            (t >= 2).then(|| LagFeatures {
                lag1: series[t - 1],
                lag2: series[t - 2],
            })
        })
        .collect())
}

/// Trailing `n`-day mean including day `t`, aligned with the input; the first `n-1` entries are `None`.
pub fn make_rolling_means(series: &[f64], n: usize) -> Result<Vec<Option<f64>>> {
    if n < 1 {
        return Err(FeatureError::InvalidWindow);
    }
    if series.len() < n {
        return Err(FeatureError::SeriesTooShort {
            needed: n,
            got: series.len(),
        });
    }
    Ok((0..series.len())
        .map(|t| {
            (t + 1 >= n).then(|| {
                let window = &series[t + 1 - n..=t];
                window.iter().sum::<f64>() / n as f64
            })
        })
        .collect())
}

/// Holds out the last `⌈fraction·N⌉` rows, preserving order.
pub fn chronological_split<T: Clone>(rows: &[T], test_fraction: f64) -> Result<(Vec<T>, Vec<T>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(FeatureError::InvalidFraction(test_fraction));
    }
    let n = rows.len();
    let n_test = (test_fraction * n as f64).ceil() as usize;
    if n_test == 0 || n_test >= n {
        return Err(FeatureError::DegenerateSplit {
            n,
            fraction: test_fraction,
        });
    }
    let cut = n - n_test;
    Ok((rows[..cut].to_vec(), rows[cut..].to_vec()))
}
