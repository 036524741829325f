//! Deterministic synthetic site for tests, demos and the acceptance suite.
//!
//! AOD carries a 30-day cycle plus AR(1) noise; wind speed co-moves with the
//! noise so the meteorology carries some same-day information about dust.
//! Actual irradiance follows Beer-Lambert attenuation at the noon air mass
//! with 1% multiplicative noise. AOD is delivered as scaled pixel integers,
//! with a small share of cloud-masked (empty) days.

use std::f64::consts::PI;

use chrono::{Datelike, Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ingestion::{self, IngestError, MergedDailyRecord, RawAodSample, RawMeteoRecord, RegionOfInterest, DEFAULT_AOD_SCALE};
use crate::physics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub start: NaiveDate,
    pub days: usize,
    pub latitude: f64,
    pub seed: u64,
    pub aod_mean: f64,
    pub aod_amplitude: f64,
    pub period_days: f64,
    pub noise_phi: f64,
    pub noise_sigma: f64,
    /// Relative standard deviation of the actual-irradiance noise.
    pub irradiance_noise: f64,
    pub pixels_per_day: usize,
    pub pixel_sigma: f64,
    pub empty_day_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2010, 1, 1).expect("valid date"),
            days: 1500,
            latitude: 24.75,
            seed: 42,
            aod_mean: 0.5,
            aod_amplitude: 0.2,
            period_days: 30.0,
            noise_phi: 0.7,
            noise_sigma: 0.03,
            irradiance_noise: 0.01,
            pixels_per_day: 9,
            pixel_sigma: 0.02,
            empty_day_fraction: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSite {
    pub meteo: Vec<RawMeteoRecord>,
    pub aod_samples: Vec<RawAodSample>,
    /// Latent daily AOD used to attenuate irradiance.
    pub true_aod: Vec<f64>,
    /// Noise-free periodic part of the AOD series.
    pub seasonal_aod: Vec<f64>,
}

impl SyntheticSite {
    pub fn roi(&self, latitude: f64) -> RegionOfInterest {
        RegionOfInterest {
            name: "synthetic".into(),
            center_lat: latitude,
            center_lon: 55.0,
            radius_km: 20.0,
        }
    }

    pub fn curate(&self, roi: &RegionOfInterest) -> Result<Vec<MergedDailyRecord>, IngestError> {
        ingestion::curate(&self.meteo, &self.aod_samples, roi)
    }
}

pub fn generate(config: &SyntheticConfig) -> SyntheticSite {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut n = || std_normal.sample(&mut rng);
    let mut draws = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);

    let mut meteo = Vec::with_capacity(config.days);
    let mut aod_samples = Vec::with_capacity(config.days);
    let mut true_aod = Vec::with_capacity(config.days);
    let mut seasonal_aod = Vec::with_capacity(config.days);
    let mut noise = 0.0;
    for t in 0..config.days {
        let date = config.start + Days::new(t as u64);
        let doy = date.ordinal();
        let annual = 2.0 * PI * (doy as f64 - 110.0) / 365.25;

        let seasonal = config.aod_mean + config.aod_amplitude * (2.0 * PI * t as f64 / config.period_days).sin();
        noise = config.noise_phi * noise + config.noise_sigma * n();
        let aod = (seasonal + noise).max(0.02);

        let t2m = 28.0 + 7.0 * annual.sin() + 0.8 * n();
        let t2mdew = t2m - 12.0 + 1.5 * n();
        let ws2m = (3.5 + 0.6 * annual.cos() + 15.0 * noise + 0.3 * n()).max(0.1);
        let qv2m = (10.0 + 4.0 * annual.sin() + 0.5 * n()).max(0.5);
        let ps = 100.8 - 0.6 * annual.sin() + 0.1 * n();

        let clear = 330.0 + 60.0 * (2.0 * PI * (doy as f64 - 172.0) / 365.25).cos() + 2.0 * n();
        let air_mass = physics::daily_air_mass(config.latitude, doy).expect("noon sun above horizon");
        let actual = (clear * (-aod * air_mass).exp() * (1.0 + config.irradiance_noise * n())).max(0.0);

        let pixel_values = if draws.random::<f64>() < config.empty_day_fraction {
            Vec::new()
        } else {
            (0..config.pixels_per_day)
                .map(|_| ((aod + config.pixel_sigma * n()).max(0.0) / DEFAULT_AOD_SCALE).round() as i32)
                .collect()
        };

        meteo.push(RawMeteoRecord {
            date,
            t2m,
            t2mdew,
            ws2m,
            qv2m,
            ps,
            irradiance_clear_sky: clear,
            irradiance_actual: actual,
        });
        aod_samples.push(RawAodSample {
            date,
            pixel_values,
            scale_factor: DEFAULT_AOD_SCALE,
        });
        true_aod.push(aod);
        seasonal_aod.push(seasonal);
    }
    SyntheticSite {
        meteo,
        aod_samples,
        true_aod,
        seasonal_aod,
    }
}

/// Generates and curates in one step.
pub fn curated_records(config: &SyntheticConfig) -> Vec<MergedDailyRecord> {
    let site = generate(config);
    site.curate(&site.roi(config.latitude)).expect("synthetic data always curates")
}
