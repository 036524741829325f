//! HTTP service over a trained dustcast bundle.
//!
//! Every response body is a JSON object carrying `schema_version`. The loaded
//! bundle is immutable; each request computes its forecast from scratch, so
//! concurrent scenario requests cannot observe each other.

// Handlers short-circuit with a ready `Response` as their error type.
#![allow(clippy::result_large_err)]

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use dustcast_core::bundle::BUNDLE_SCHEMA_VERSION;
use dustcast_core::controller::{directives_for_forecast, ControllerThresholds};
use dustcast_core::explain::{attribution_summary, explain_forecast, AttributionReport, ShapleyMode, SummaryRow};
use dustcast_core::forecast::{forecast_pipeline, IrradianceMode, PipelineForecast, ScenarioSpec, DEFAULT_HORIZON};
use dustcast_core::pipeline::TrainedPipeline;

/// Version of the JSON layout served by this API.
pub const API_SCHEMA_VERSION: u32 = 1;

/// Longest horizon a single request may ask for.
pub const MAX_HORIZON: usize = 366;

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceSettings {
    pub default_horizon: usize,
    pub irradiance: IrradianceMode,
    pub thresholds: ControllerThresholds,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        Self {
            default_horizon: DEFAULT_HORIZON,
            irradiance: IrradianceMode::HoldLast,
            thresholds: ControllerThresholds::default(),
        }
    }
}

/// Attributions for the baseline forecast at the default horizon.
#[derive(Debug, Clone, Serialize)]
pub struct AttributionsBody {
    pub stage: u8,
    pub dates: Vec<NaiveDate>,
    pub summary: Vec<SummaryRow>,
    pub report: AttributionReport,
}

struct Snapshot {
    pipeline: TrainedPipeline,
    attributions: [AttributionsBody; 2],
}

#[derive(Clone)]
pub struct AppState {
    settings: Arc<ServiceSettings>,
    snapshot: Option<Arc<Snapshot>>,
}

impl AppState {
    /// Builds the service state. Attributions are computed here, once, so that
    /// `/attributions` is a lookup.
    pub fn new(settings: ServiceSettings, pipeline: Option<TrainedPipeline>) -> dustcast_core::Result<Self> {
        let snapshot = match pipeline {
            Some(pipeline) => {
                let fc = forecast_pipeline(&pipeline, settings.default_horizon, None, settings.irradiance)?;
                let dates = fc.aod.dates();
                let body = |stage: u8| -> dustcast_core::Result<AttributionsBody> {
                    let report = explain_forecast(&pipeline, &fc.aod, stage, settings.irradiance, ShapleyMode::Exact)?;
                    Ok(AttributionsBody {
                        stage,
                        dates: dates.clone(),
                        summary: attribution_summary(&report),
                        report,
                    })
                };
                let attributions = [body(1)?, body(2)?];
                Some(Arc::new(Snapshot { pipeline, attributions }))
            }
            None => None,
        };
        Ok(Self {
            settings: Arc::new(settings),
            snapshot,
        })
    }

    pub fn has_bundle(&self) -> bool {
        self.snapshot.is_some()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/forecast", get(forecast))
        .route("/scenario", post(scenario))
        .route("/directives", get(directives))
        .route("/attributions", get(attributions))
        .with_state(state)
}

/// Serializes `body` and stamps `schema_version` into the top-level object.
fn versioned<T: Serialize>(status: StatusCode, body: &T) -> Response {
    let mut value = match serde_json::to_value(body) {
        Ok(v) => v,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, format!("serialization failed: {e}")),
    };
    if let Value::Object(map) = &mut value {
        map.insert("schema_version".into(), API_SCHEMA_VERSION.into());
    }
    let bytes = serde_json::to_vec(&value).expect("a Value always serializes");
    (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    versioned(status, &json!({ "error": message.into() }))
}

type Handler<T> = Result<T, Response>;

fn loaded(state: &AppState) -> Handler<Arc<Snapshot>> {
    state
        .snapshot
        .clone()
        .ok_or_else(|| error(StatusCode::CONFLICT, "no model bundle is loaded"))
}

/// 400 when the value is not an integer, 422 when it is outside `1..=MAX_HORIZON`.
fn parse_horizon(raw: Option<&str>, default: usize) -> Handler<usize> {
    let Some(raw) = raw else { return Ok(default) };
    let n: i64 = raw
        .trim()
        .parse()
        .map_err(|_| error(StatusCode::BAD_REQUEST, format!("horizon must be an integer, got `{raw}`")))?;
    check_horizon(n)
}

fn check_horizon(n: i64) -> Handler<usize> {
    if n <= 0 || n as usize > MAX_HORIZON {
        return Err(error(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("horizon must lie in 1..={MAX_HORIZON}, got {n}"),
        ));
    }
    Ok(n as usize)
}

async fn run_forecast(
    state: &AppState,
    snapshot: Arc<Snapshot>,
    horizon: usize,
    scenario: Option<ScenarioSpec>,
) -> Handler<PipelineForecast> {
    let irradiance = state.settings.irradiance;
    let joined = tokio::task::spawn_blocking(move || {
        forecast_pipeline(&snapshot.pipeline, horizon, scenario.as_ref(), irradiance)
    })
    .await;
    match joined {
        Ok(Ok(fc)) => Ok(fc),
        Ok(Err(e)) => Err(error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
        Err(e) => Err(error(StatusCode::INTERNAL_SERVER_ERROR, format!("forecast task failed: {e}"))),
    }
}

async fn health(State(state): State<AppState>) -> Response {
    versioned(
        StatusCode::OK,
        &json!({
            "status": "ok",
            "bundle_loaded": state.has_bundle(),
            "bundle_schema_version": BUNDLE_SCHEMA_VERSION,
        }),
    )
}

async fn forecast(State(state): State<AppState>, Query(q): Query<HashMap<String, String>>) -> Response {
    let result = async {
        let horizon = parse_horizon(q.get("horizon").map(String::as_str), state.settings.default_horizon)?;
        let snapshot = loaded(&state)?;
        run_forecast(&state, snapshot, horizon, None).await
    }
    .await;
    match result {
        Ok(fc) => versioned(StatusCode::OK, &fc),
        Err(r) => r,
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioRequest {
    delta_t2m: f64,
    aod_multiplier: f64,
    #[serde(default)]
    label: String,
    horizon: Option<i64>,
}

async fn scenario(State(state): State<AppState>, body: Bytes) -> Response {
    let result = async {
        let req: ScenarioRequest = serde_json::from_slice(&body)
            .map_err(|e| error(StatusCode::BAD_REQUEST, format!("invalid scenario body: {e}")))?;
        let spec = ScenarioSpec::new(req.delta_t2m, req.aod_multiplier, req.label)
            .map_err(|e| error(StatusCode::BAD_REQUEST, e.to_string()))?;
        let horizon = match req.horizon {
            Some(n) => check_horizon(n)?,
            None => state.settings.default_horizon,
        };
        let snapshot = loaded(&state)?;
        run_forecast(&state, snapshot, horizon, Some(spec)).await
    }
    .await;
    match result {
        Ok(fc) => versioned(StatusCode::OK, &fc),
        Err(r) => r,
    }
}

async fn directives(State(state): State<AppState>, Query(q): Query<HashMap<String, String>>) -> Response {
    let result = async {
        let horizon = parse_horizon(q.get("horizon").map(String::as_str), state.settings.default_horizon)?;
        let salinity = match q.get("salinity") {
            Some(s) => Some(
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| error(StatusCode::BAD_REQUEST, format!("salinity must be a non-negative number, got `{s}`")))?,
            ),
            None => None,
        };
        let snapshot = loaded(&state)?;
        let fc = run_forecast(&state, snapshot, horizon, None).await?;
        let salinity = salinity.map(|s| vec![s; horizon]);
        let list = directives_for_forecast(&fc, salinity.as_deref(), &state.settings.thresholds)
            .map_err(|e| error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        Ok(json!({ "horizon": horizon, "directives": list }))
    }
    .await;
    match result {
        Ok(body) => versioned(StatusCode::OK, &body),
        Err(r) => r,
    }
}

async fn attributions(State(state): State<AppState>, Query(q): Query<HashMap<String, String>>) -> Response {
    let result = (|| {
        let raw = q
            .get("stage")
            .ok_or_else(|| error(StatusCode::BAD_REQUEST, "missing `stage` query parameter"))?;
        let stage: i64 = raw
            .parse()
            .map_err(|_| error(StatusCode::BAD_REQUEST, format!("stage must be an integer, got `{raw}`")))?;
        if !(stage == 1 || stage == 2) {
            return Err(error(StatusCode::UNPROCESSABLE_ENTITY, format!("stage must be 1 or 2, got {stage}")));
        }
        let snapshot = loaded(&state)?;
        Ok(snapshot.attributions[stage as usize - 1].clone())
    })();
    match result {
        Ok(body) => versioned(StatusCode::OK, &body),
        Err(r) => r,
    }
}
