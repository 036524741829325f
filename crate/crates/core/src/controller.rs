//! Rule-based plant control from forecast AOD and solar efficiency.
//!
//! | severity | AOD band        | RO pressure | other actions                       |
//! |----------|-----------------|-------------|-------------------------------------|
//! | LOW      | ≤ 0.7           | 0 %         | throughput maximized                |
//! | MODERATE | (0.7, 1.5]      | 0 %         | throughput maximized                |
//! | HIGH     | (1.5, 3.0]      | −8 %        | chemical cleaning deferred 24 h if sustained |
//! | SEVERE   | > 3.0           | −15 %       | robotic cleaning                    |
//!
//! Independently, solar efficiency below 65 % raises grid import by 25 %
//! and salinity above 45 g/L switches on pre-treatment.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forecast::PipelineForecast;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("AOD must be a non-negative number, got {0}")]
    InvalidAod(f64),
    #[error("solar efficiency must lie in [0, 100], got {0}")]
    InvalidEfficiency(f64),
    #[error("salinity must be a non-negative number, got {0}")]
    InvalidSalinity(f64),
    #[error("thresholds must be strictly increasing: {0}")]
    InvalidThresholds(String),
    #[error("salinity series has {got} values for a {expected}-day forecast")]
    SalinityLength { expected: usize, got: usize },
}

pub type Result<T, E = ControlError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SeverityLevel {
    Low,
    Moderate,
    High,
    Severe,
}

impl SeverityLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            SeverityLevel::Low => "LOW",
            SeverityLevel::Moderate => "MODERATE",
            SeverityLevel::High => "HIGH",
            SeverityLevel::Severe => "SEVERE",
        }
    }
}

impl std::fmt::Display for SeverityLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerThresholds {
    /// Upper bound (inclusive) of LOW.
    pub low_max_aod: f64,
    /// Upper bound (inclusive) of MODERATE.
    pub moderate_max_aod: f64,
    /// Upper bound (inclusive) of HIGH.
    pub high_max_aod: f64,
    /// Grid import rises when solar efficiency drops below this, percent.
    pub efficiency_floor_pct: f64,
    /// Pre-treatment starts when salinity exceeds this, g/L.
    pub salinity_limit_g_l: f64,
}

impl Default for ControllerThresholds {
    fn default() -> Self {
        Self {
            low_max_aod: 0.7,
            moderate_max_aod: 1.5,
            high_max_aod: 3.0,
            efficiency_floor_pct: 65.0,
            salinity_limit_g_l: 45.0,
        }
    }
}

impl ControllerThresholds {
    pub fn validate(&self) -> Result<()> {
        let bands = [self.low_max_aod, self.moderate_max_aod, self.high_max_aod];
        if !(bands[0] >= 0.0 && bands[0] < bands[1] && bands[1] < bands[2] && bands[2].is_finite()) {
            return Err(ControlError::InvalidThresholds(format!("{bands:?}")));
        }
        Ok(())
    }
}

pub const RULE_SEVERE: &str = "severe-dust-pressure-cut";
pub const RULE_HIGH: &str = "high-dust-pressure-cut";
pub const RULE_DEFERRAL: &str = "sustained-dust-cleaning-deferral";
pub const RULE_THROUGHPUT: &str = "low-dust-throughput-max";
pub const RULE_GRID: &str = "low-efficiency-grid-import";
pub const RULE_SALINITY: &str = "high-salinity-pretreatment";

const SEVERE_PRESSURE_DELTA_PCT: f64 = -15.0;
const HIGH_PRESSURE_DELTA_PCT: f64 = -8.0;
const DEFERRAL_HOURS: u32 = 24;
const GRID_IMPORT_INCREASE_PCT: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub predicted_aod: f64,
    pub solar_efficiency_pct: f64,
    pub salinity_g_l: Option<f64>,
    pub sustained_high_dust: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThroughputMode {
    Normal,
    Maximized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDirective {
    pub severity: SeverityLevel,
    pub ro_pressure_delta_pct: f64,
    pub robotic_cleaning: bool,
    pub chemical_cleaning_deferral_h: u32,
    pub grid_import_increase_pct: f64,
    pub pretreatment: bool,
    pub throughput_mode: ThroughputMode,
    /// Identifiers of every rule that fired, in evaluation order.
    pub rationale: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatedDirective {
    pub date: NaiveDate,
    #[serde(flatten)]
    pub directive: ControlDirective,
}

pub fn classify_severity_with(aod: f64, t: &ControllerThresholds) -> Result<SeverityLevel> {
    if !(aod >= 0.0) || aod.is_infinite() {
        return Err(ControlError::InvalidAod(aod));
    }
    Ok(if aod <= t.low_max_aod {
        SeverityLevel::Low
    } else if aod <= t.moderate_max_aod {
        SeverityLevel::Moderate
    } else if aod <= t.high_max_aod {
        SeverityLevel::High
    } else {
        SeverityLevel::Severe
    })
}

pub fn classify_severity(aod: f64) -> Result<SeverityLevel> {
    classify_severity_with(aod, &ControllerThresholds::default())
}

pub fn decide_directive_with(state: &PlantState, t: &ControllerThresholds) -> Result<ControlDirective> {
    let severity = classify_severity_with(state.predicted_aod, t)?;
    if !(0.0..=100.0).contains(&state.solar_efficiency_pct) {
        return Err(ControlError::InvalidEfficiency(state.solar_efficiency_pct));
    }
    if let Some(s) = state.salinity_g_l {
        if !(s >= 0.0) || s.is_infinite() {
            return Err(ControlError::InvalidSalinity(s));
        }
    }

    let mut d = ControlDirective {
        severity,
        ro_pressure_delta_pct: 0.0,
        robotic_cleaning: false,
        chemical_cleaning_deferral_h: 0,
        grid_import_increase_pct: 0.0,
        pretreatment: false,
        throughput_mode: ThroughputMode::Normal,
        rationale: Vec::new(),
    };
    match severity {
        SeverityLevel::Severe => {
            d.ro_pressure_delta_pct = SEVERE_PRESSURE_DELTA_PCT;
            d.robotic_cleaning = true;
            d.rationale.push(RULE_SEVERE.into());
        }
        SeverityLevel::High => {
            d.ro_pressure_delta_pct = HIGH_PRESSURE_DELTA_PCT;
            d.rationale.push(RULE_HIGH.into());
            if state.sustained_high_dust {
                d.chemical_cleaning_deferral_h = DEFERRAL_HOURS;
                d.rationale.push(RULE_DEFERRAL.into());
            }
        }
        SeverityLevel::Moderate | SeverityLevel::Low => {
            d.throughput_mode = ThroughputMode::Maximized;
            d.rationale.push(RULE_THROUGHPUT.into());
        }
    }
    if state.solar_efficiency_pct < t.efficiency_floor_pct {
        d.grid_import_increase_pct = GRID_IMPORT_INCREASE_PCT;
        d.rationale.push(RULE_GRID.into());
    }
    if state.salinity_g_l.is_some_and(|s| s > t.salinity_limit_g_l) {
        d.pretreatment = true;
        d.rationale.push(RULE_SALINITY.into());
    }
    Ok(d)
}

pub fn decide_directive(state: &PlantState) -> Result<ControlDirective> {
    decide_directive_with(state, &ControllerThresholds::default())
}

/// One directive per forecast day.
///
/// Dust counts as sustained on day `k` when days `k` and `k+1` are both at
/// least HIGH. The final day has no successor and is never sustained.
pub fn directives_for_forecast(
    forecast: &PipelineForecast,
    salinity: Option<&[f64]>,
    t: &ControllerThresholds,
) -> Result<Vec<DatedDirective>> {
    let n = forecast.aod.values.len();
    if let Some(s) = salinity {
        if s.len() != n {
            return Err(ControlError::SalinityLength {
                expected: n,
                got: s.len(),
            });
        }
    }
    let severities = forecast
        .aod
        .values
        .iter()
        .map(|a| classify_severity_with(*a, t))
        .collect::<Result<Vec<_>>>()?;
    (0..n)
        .map(|k| {
            let sustained = k + 1 < n && severities[k] >= SeverityLevel::High && severities[k + 1] >= SeverityLevel::High;
            let state = PlantState {
                predicted_aod: forecast.aod.values[k],
                solar_efficiency_pct: forecast.solar_efficiency_pct[k],
                salinity_g_l: salinity.map(|s| s[k]),
                sustained_high_dust: sustained,
            };
            Ok(DatedDirective {
                date: forecast.aod.inputs_log[k].date,
                directive: decide_directive_with(&state, t)?,
            })
        })
        .collect()
}
