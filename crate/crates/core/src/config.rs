//! Application configuration, read from TOML.
//!
//! The `[site]` table has no default: plant coordinates must be supplied.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControllerThresholds;
use crate::forecast::{IrradianceMode, ScenarioSpec, DEFAULT_HORIZON};
use crate::ingestion::RegionOfInterest;
use crate::models::{ModelFamily, RegressorConfig};
use crate::pipeline::PipelineConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub type Result<T, E = ConfigError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteConfig {
    pub name: String,
    /// Degrees north; also sets the noon air mass.
    pub latitude: f64,
    pub longitude: f64,
    /// Radius of the pixel-averaging region.
    pub radius_km: f64,
}

impl SiteConfig {
    pub fn roi(&self) -> RegionOfInterest {
        RegionOfInterest {
            name: self.name.clone(),
            center_lat: self.latitude,
            center_lon: self.longitude,
            radius_km: self.radius_km,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct DataPaths {
    pub meteo: Option<PathBuf>,
    pub aod: Option<PathBuf>,
    pub merged: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum IrradianceChoice {
    #[default]
    HoldLast,
    BeerLambert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastConfig {
    pub horizon: usize,
    pub irradiance: IrradianceChoice,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            irradiance: IrradianceChoice::HoldLast,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub families: Vec<RegressorConfig>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            families: ModelFamily::ALL.iter().map(|f| RegressorConfig::default_for(*f)).collect(),
        }
    }
}

fn default_scenarios() -> BTreeMap<String, ScenarioSpec> {
    BTreeMap::from([("paper".to_string(), ScenarioSpec::stress_preset())])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppConfig {
    pub site: SiteConfig,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub controller: ControllerThresholds,
    #[serde(default = "default_scenarios")]
    pub scenarios: BTreeMap<String, ScenarioSpec>,
    #[serde(default)]
    pub forecast: ForecastConfig,
    #[serde(default)]
    pub server: ServerConfig,
    #[serde(default)]
    pub baselines: BaselineConfig,
}

impl AppConfig {
    pub fn with_site(site: SiteConfig) -> Self {
        Self {
            site,
            data: DataPaths::default(),
            pipeline: PipelineConfig::default(),
            controller: ControllerThresholds::default(),
            scenarios: default_scenarios(),
            forecast: ForecastConfig::default(),
            server: ServerConfig::default(),
            baselines: BaselineConfig::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative data paths are taken relative to the config file.
        if let Some(base) = path.parent() {
            for p in [&mut cfg.data.meteo, &mut cfg.data.aod, &mut cfg.data.merged, &mut cfg.data.bundle]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.site
            .roi()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.controller
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let f = self.pipeline.test_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(ConfigError::Invalid(format!("test_fraction must lie in (0, 1), got {f}")));
        }
        if self.forecast.horizon == 0 {
            return Err(ConfigError::Invalid("forecast horizon must be at least 1".into()));
        }
        for (name, s) in &self.scenarios {
            s.validate()
                .map_err(|e| ConfigError::Invalid(format!("scenario `{name}`: {e}")))?;
        }
        Ok(())
    }

    pub fn irradiance_mode(&self) -> IrradianceMode {
        match self.forecast.irradiance {
            IrradianceChoice::HoldLast => IrradianceMode::HoldLast,
            IrradianceChoice::BeerLambert => IrradianceMode::BeerLambert {
                latitude: self.site.latitude,
            },
        }
    }
}
