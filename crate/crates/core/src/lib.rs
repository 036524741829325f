//! Dust-aware forecasting for solar-powered desalination.
//!
//! The pipeline curates daily meteorology and satellite AOD, predicts AOD
//! with a hybrid static/sequence model, feeds the prediction into an
//! efficiency-loss regressor, and turns forecasts into plant directives.

// `!(x > 0.0)` is used on purpose so that NaN fails validation; the numeric
// kernels index several arrays in lockstep.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bundle;
pub mod config;
pub mod controller;
pub mod explain;
pub mod features;
pub mod forecast;
pub mod ingestion;
pub mod models;
pub mod physics;
pub mod pipeline;
pub mod synthetic;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] ingestion::IngestError),
    #[error(transparent)]
    Feature(#[from] features::FeatureError),
    #[error(transparent)]
    Model(#[from] models::ModelError),
    #[error(transparent)]
    Physics(#[from] physics::PhysicsError),
    #[error(transparent)]
    Forecast(#[from] forecast::ForecastError),
    #[error(transparent)]
    Control(#[from] controller::ControlError),
    #[error(transparent)]
    Explain(#[from] explain::ExplainError),
    #[error(transparent)]
    Bundle(#[from] bundle::BundleError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
