//! Browser bindings for the demo page in `www/`.
//!
//! Each exported function is a thin wrapper over a plain Rust function that
//! returns JSON, so everything here is testable without a browser.

use std::sync::OnceLock;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use dustcast_core::controller::{decide_directive, ControlDirective, PlantState};
use dustcast_core::forecast::{forecast_pipeline, IrradianceMode, ScenarioSpec};
use dustcast_core::physics::{attenuate_irradiance, daily_air_mass, efficiency_loss_pct};
use dustcast_core::pipeline::{train_pipeline, PipelineConfig, TrainedPipeline};
use dustcast_core::synthetic::{curated_records, SyntheticConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttenuationCurve {
    pub air_mass: f64,
    pub aod: Vec<f64>,
    pub irradiance: Vec<f64>,
    pub efficiency_loss_pct: Vec<f64>,
}

/// Irradiance and loss over `steps + 1` evenly spaced AOD values in `[0, aod_max]`,
/// at the noon air mass for the given latitude and day of year.
pub fn attenuation_curve(
    clear_sky: f64,
    latitude: f64,
    day_of_year: u32,
    aod_max: f64,
    steps: usize,
) -> Result<AttenuationCurve, String> {
    if !(aod_max.is_finite() && aod_max > 0.0) || steps == 0 || steps > 10_000 {
        return Err("aod_max must be positive and steps in 1..=10000".into());
    }
    let m = daily_air_mass(latitude, day_of_year).map_err(|e| e.to_string())?;
    let aod: Vec<f64> = (0..=steps).map(|k| aod_max * k as f64 / steps as f64).collect();
    let irradiance = aod
        .iter()
        .map(|a| attenuate_irradiance(clear_sky, *a, m))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let efficiency_loss_pct = irradiance
        .iter()
        .map(|i| efficiency_loss_pct(clear_sky, *i))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok(AttenuationCurve {
        air_mass: m,
        aod,
        irradiance,
        efficiency_loss_pct,
    })
}

/// Controller decision for one day. A negative salinity means "not measured".
pub fn directive(aod: f64, solar_efficiency_pct: f64, salinity_g_l: f64, sustained: bool) -> Result<ControlDirective, String> {
    decide_directive(&PlantState {
        predicted_aod: aod,
        solar_efficiency_pct,
        salinity_g_l: (salinity_g_l >= 0.0).then_some(salinity_g_l),
        sustained_high_dust: sustained,
    })
    .map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioProjection {
    pub dates: Vec<String>,
    pub baseline_aod: Vec<f64>,
    pub scenario_aod: Vec<f64>,
    pub baseline_loss_pct: Vec<f64>,
    pub scenario_loss_pct: Vec<f64>,
    pub mean_loss_delta: f64,
}

/// A small model trained once on synthetic data, shared by every projection.
fn demo_pipeline() -> Result<&'static TrainedPipeline, String> {
    static P: OnceLock<Result<TrainedPipeline, String>> = OnceLock::new();
    P.get_or_init(|| {
        let records = curated_records(&SyntheticConfig {
            days: 365,
            ..SyntheticConfig::default()
        });
        train_pipeline(&records, &PipelineConfig::quick()).map_err(|e| e.to_string())
    })
    .as_ref()
    .map_err(Clone::clone)
}

pub fn scenario_projection(delta_t2m: f64, aod_multiplier: f64, horizon: usize) -> Result<ScenarioProjection, String> {
    if horizon == 0 || horizon > 90 {
        return Err("horizon must lie in 1..=90".into());
    }
    let spec = ScenarioSpec::new(delta_t2m, aod_multiplier, "demo").map_err(|e| e.to_string())?;
    let p = demo_pipeline()?;
    let base = forecast_pipeline(p, horizon, None, IrradianceMode::HoldLast).map_err(|e| e.to_string())?;
    let scen = forecast_pipeline(p, horizon, Some(&spec), IrradianceMode::HoldLast).map_err(|e| e.to_string())?;
    let mean_loss_delta = scen
        .efficiency_loss_pct
        .iter()
        .zip(&base.efficiency_loss_pct)
        .map(|(s, b)| s - b)
        .sum::<f64>()
        / horizon as f64;
    Ok(ScenarioProjection {
        dates: base.aod.dates().iter().map(|d| d.to_string()).collect(),
        baseline_aod: base.aod.values,
        scenario_aod: scen.aod.values,
        baseline_loss_pct: base.efficiency_loss_pct,
        scenario_loss_pct: scen.efficiency_loss_pct,
        mean_loss_delta,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = attenuationCurve)]
pub fn attenuation_curve_js(clear_sky: f64, latitude: f64, day_of_year: u32, aod_max: f64, steps: usize) -> Result<String, JsError> {
    to_js(attenuation_curve(clear_sky, latitude, day_of_year, aod_max, steps))
}

#[wasm_bindgen(js_name = plantDirective)]
pub fn directive_js(aod: f64, solar_efficiency_pct: f64, salinity_g_l: f64, sustained: bool) -> Result<String, JsError> {
    to_js(directive(aod, solar_efficiency_pct, salinity_g_l, sustained))
}

#[wasm_bindgen(js_name = scenarioProjection)]
pub fn scenario_projection_js(delta_t2m: f64, aod_multiplier: f64, horizon: usize) -> Result<String, JsError> {
    to_js(scenario_projection(delta_t2m, aod_multiplier, horizon))
}
