//! Closed-form solar and desalination physics.
//!
//! Irradiance attenuation by aerosol loading follows a Beer–Lambert form,
//! `I_actual = I_clear · exp(−AOD · m)`, where `m` is the air-mass
//! coefficient `1 / cos(θ)` for solar zenith angle `θ`. Efficiency loss is
//! the relative shortfall of actual against clear-sky irradiance, in percent.
//!
//! Note the two different "m"s in this domain: `air_mass` is the optical
//! path factor, `mass_flow_kg_s` is the freshwater production rate of a
//! thermal plant. They never share a code path.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("clear-sky irradiance must be positive, got {0}")]
    NonPositiveClearSky(f64),
    #[error("irradiance must be non-negative, got {0}")]
    NegativeIrradiance(f64),
    #[error("irradiance must be positive, got {0}")]
    NonPositiveIrradiance(f64),
    #[error("aerosol optical depth must be non-negative, got {0}")]
    NegativeAod(f64),
    #[error("air mass must be at least 1, got {0}")]
    AirMassBelowOne(f64),
    #[error("solar zenith {0}° is outside [0, 90): sun at or below the horizon")]
    ZenithOutOfRange(f64),
    #[error("efficiency loss {0}% is outside [0, 100]")]
    LossOutOfRange(f64),
    #[error("invalid plant specification: {0}")]
    InvalidSpec(&'static str),
}

pub type Result<T, E = PhysicsError> = std::result::Result<T, E>;

/// Percent reduction of actual irradiance relative to clear sky.
pub fn efficiency_loss_pct(i_clear: f64, i_actual: f64) -> Result<f64> {
    if !(i_clear > 0.0) {
        return Err(PhysicsError::NonPositiveClearSky(i_clear));
    }
    if !(i_actual >= 0.0) {
        return Err(PhysicsError::NegativeIrradiance(i_actual));
    }
    Ok(100.0 * (i_clear - i_actual) / i_clear)
}

/// Beer–Lambert attenuation of clear-sky irradiance by aerosol.
pub fn attenuate_irradiance(i_clear: f64, aod: f64, air_mass: f64) -> Result<f64> {
    if !(i_clear >= 0.0) {
        return Err(PhysicsError::NegativeIrradiance(i_clear));
    }
    if !(aod >= 0.0) {
        return Err(PhysicsError::NegativeAod(aod));
    }
    if !(air_mass >= 1.0) {
        return Err(PhysicsError::AirMassBelowOne(air_mass));
    }
    Ok(i_clear * (-aod * air_mass).exp())
}

/// Plane-parallel air mass `1 / cos(θ)`.
pub fn air_mass_coefficient(zenith_deg: f64) -> Result<f64> {
    if !(0.0..90.0).contains(&zenith_deg) {
        return Err(PhysicsError::ZenithOutOfRange(zenith_deg));
    }
    if zenith_deg == 0.0 {
        return Ok(1.0);
    }
    // cos can round to slightly above 1/m_true near zero; keep m ≥ 1.
    Ok((1.0 / zenith_deg.to_radians().cos()).max(1.0))
}

/// Solar declination in degrees (Cooper's approximation).
pub fn solar_declination_deg(day_of_year: u32) -> f64 {
    23.45 * (360.0 / 365.0 * (284.0 + day_of_year as f64)).to_radians().sin()
}

/// Zenith angle at local solar noon for a site latitude and day of year.
pub fn noon_zenith_deg(latitude_deg: f64, day_of_year: u32) -> f64 {
    (latitude_deg - solar_declination_deg(day_of_year)).abs()
}

/// Daily air mass, taken at local solar noon.
pub fn daily_air_mass(latitude_deg: f64, day_of_year: u32) -> Result<f64> {
    air_mass_coefficient(noon_zenith_deg(latitude_deg, day_of_year))
}

/// Solar efficiency as the complement of efficiency loss.
pub fn solar_efficiency_pct(efficiency_loss: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&efficiency_loss) {
        return Err(PhysicsError::LossOutOfRange(efficiency_loss));
    }
    Ok(100.0 - efficiency_loss)
}

/// A single irradiance observation with its attenuation geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrradianceSample {
    pub irradiance_clear_sky: f64,
    pub irradiance_actual: f64,
    pub aod: f64,
    pub air_mass: f64,
    pub zenith_deg: f64,
}

impl IrradianceSample {
    /// Builds a sample whose actual irradiance is the Beer–Lambert prediction.
    pub fn from_geometry(i_clear: f64, aod: f64, zenith_deg: f64) -> Result<Self> {
        let air_mass = air_mass_coefficient(zenith_deg)?;
        Ok(Self {
            irradiance_clear_sky: i_clear,
            irradiance_actual: attenuate_irradiance(i_clear, aod, air_mass)?,
            aod,
            air_mass,
            zenith_deg,
        })
    }

    pub fn efficiency_loss_pct(&self) -> Result<f64> {
        efficiency_loss_pct(self.irradiance_clear_sky, self.irradiance_actual)
    }
}

/// Solar thermal desalination plant parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalPlantSpec {
    mass_flow_kg_s: f64,
    latent_heat_kj_kg: f64,
    collector_area_m2: f64,
}

impl ThermalPlantSpec {
    pub fn new(mass_flow_kg_s: f64, latent_heat_kj_kg: f64, collector_area_m2: f64) -> Result<Self> {
        if !(mass_flow_kg_s > 0.0) {
            return Err(PhysicsError::InvalidSpec("mass flow must be positive"));
        }
        if !(latent_heat_kj_kg > 0.0) {
            return Err(PhysicsError::InvalidSpec("latent heat must be positive"));
        }
        if !(collector_area_m2 > 0.0) {
            return Err(PhysicsError::InvalidSpec("collector area must be positive"));
        }
        Ok(Self {
            mass_flow_kg_s,
            latent_heat_kj_kg,
            collector_area_m2,
        })
    }

    pub fn mass_flow_kg_s(&self) -> f64 {
        self.mass_flow_kg_s
    }

    pub fn latent_heat_kj_kg(&self) -> f64 {
        self.latent_heat_kj_kg
    }

    pub fn collector_area_m2(&self) -> f64 {
        self.collector_area_m2
    }
}

/// Thermal efficiency `ṁ·h_fg / (A·I)`; latent heat is given in kJ/kg.
pub fn thermal_efficiency(spec: &ThermalPlantSpec, irradiance: f64) -> Result<f64> {
    if !(irradiance > 0.0) {
        return Err(PhysicsError::NonPositiveIrradiance(irradiance));
    }
    let useful_w = spec.mass_flow_kg_s * spec.latent_heat_kj_kg * 1000.0;
    Ok(useful_w / (spec.collector_area_m2 * irradiance))
}

/// Photovoltaic module parameters for the linear irradiance-sensitivity model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvSpec {
    eta_ref: f64,
    alpha_per_w_m2: f64,
    i_ref: f64,
}

impl PvSpec {
    pub fn new(eta_ref: f64, alpha_per_w_m2: f64, i_ref: f64) -> Result<Self> {
        if !(eta_ref > 0.0 && eta_ref < 1.0) {
            return Err(PhysicsError::InvalidSpec("reference efficiency must lie in (0, 1)"));
        }
        if !alpha_per_w_m2.is_finite() {
            return Err(PhysicsError::InvalidSpec("sensitivity coefficient must be finite"));
        }
        if !(i_ref > 0.0) {
            return Err(PhysicsError::InvalidSpec("reference irradiance must be positive"));
        }
        Ok(Self {
            eta_ref,
            alpha_per_w_m2,
            i_ref,
        })
    }

    pub fn eta_ref(&self) -> f64 {
        self.eta_ref
    }

    pub fn alpha_per_w_m2(&self) -> f64 {
        self.alpha_per_w_m2
    }

    pub fn i_ref(&self) -> f64 {
        self.i_ref
    }
}

/// PV efficiency, clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvEfficiency {
    pub value: f64,
    /// Set when the linear model left `[0, 1]` and was clamped.
    pub clamped: bool,
}

pub fn pv_efficiency(spec: &PvSpec, irradiance: f64) -> Result<PvEfficiency> {
    if !(irradiance >= 0.0) {
        return Err(PhysicsError::NegativeIrradiance(irradiance));
    }
    let raw = spec.eta_ref * (1.0 + spec.alpha_per_w_m2 * (irradiance - spec.i_ref));
    let value = raw.clamp(0.0, 1.0);
    Ok(PvEfficiency {
        value,
        clamped: value != raw,
    })
}
