//! Source data acquisition and curation.
//!
//! Daily meteorology arrives as [`RawMeteoRecord`]s and satellite AOD as
//! per-day pixel lists ([`RawAodSample`]). AOD pixels are averaged over the
//! region of interest, merged onto the meteorological calendar, gap-filled,
//! and the efficiency-loss column is derived from the two irradiances.
//!
//! Units: temperature °C, pressure kPa, specific humidity g/kg, wind m/s,
//! irradiance W/m². AOD is dimensionless once it leaves this module.

mod source;

pub use source::{
    fetch_aod, fetch_meteo, load_merged, read_aod_csv, read_merged_csv, read_meteo_csv, write_aod_csv,
    write_merged_csv, write_meteo_csv, DataSource, AOD_HEADER, MERGED_HEADER, METEO_HEADER,
};

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics;

pub const DEFAULT_AOD_SCALE: f64 = 0.001;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("data source unreachable: {0}")]
    SourceUnreachable(String),
    #[error("malformed record at line {line}: field `{field}` {reason}")]
    MalformedRecord {
        line: u64,
        field: String,
        reason: String,
    },
    #[error("empty date range {start}..={end}")]
    EmptyRange { start: NaiveDate, end: NaiveDate },
    #[error("no record for {0} inside the requested range")]
    MissingDay(NaiveDate),
    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),
    #[error("scale factor must be positive, got {scale} on {date}")]
    InvalidScaleFactor { date: NaiveDate, scale: f64 },
    #[error("no valid AOD value anywhere in the series")]
    NoValidAod,
    #[error("clear-sky irradiance is zero or negative on {0}")]
    ZeroClearSkyIrradiance(NaiveDate),
    #[error("invalid region of interest: {0}")]
    InvalidRegion(&'static str),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

/// Circular area around the plant over which satellite pixels are averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionOfInterest {
    pub name: String,
    pub center_lat: f64,
    pub center_lon: f64,
    pub radius_km: f64,
}

impl RegionOfInterest {
    pub fn new(name: impl Into<String>, center_lat: f64, center_lon: f64, radius_km: f64) -> Result<Self> {
        let roi = Self {
            name: name.into(),
            center_lat,
            center_lon,
            radius_km,
        };
        roi.validate()?;
        Ok(roi)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.center_lat) {
            return Err(IngestError::InvalidRegion("latitude outside [-90, 90]"));
        }
        if !(-180.0..=180.0).contains(&self.center_lon) {
            return Err(IngestError::InvalidRegion("longitude outside [-180, 180]"));
        }
        if !(self.radius_km > 0.0) {
            return Err(IngestError::InvalidRegion("radius must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMeteoRecord {
    pub date: NaiveDate,
    pub t2m: f64,
    pub t2mdew: f64,
    pub ws2m: f64,
    pub qv2m: f64,
    pub ps: f64,
    #[serde(rename = "irr_clear")]
    pub irradiance_clear_sky: f64,
    #[serde(rename = "irr_actual")]
    pub irradiance_actual: f64,
}

/// One day of satellite retrievals over the region, as scaled integers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAodSample {
    pub date: NaiveDate,
    /// Empty on fully cloud-masked days.
    pub pixel_values: Vec<i32>,
    pub scale_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedDailyRecord {
    pub date: NaiveDate,
    pub t2m: f64,
    pub t2mdew: f64,
    pub ws2m: f64,
    pub qv2m: f64,
    pub ps: f64,
    #[serde(rename = "irr_clear")]
    pub irradiance_clear_sky: f64,
    #[serde(rename = "irr_actual")]
    pub irradiance_actual: f64,
    pub aod: f64,
    pub aod_interpolated: bool,
    /// NaN until [`derive_efficiency_loss`] has run.
    pub efficiency_loss_pct: f64,
}

/// Daily AOD as the mean of scaled pixel values; `None` for empty days.
///
/// The output is sorted by date. Pixel geolocation has already been
/// restricted to `roi` upstream, so the region only gets validated here.
pub fn aggregate_aod(
    samples: &[RawAodSample],
    roi: &RegionOfInterest,
) -> Result<Vec<(NaiveDate, Option<f64>)>> {
    roi.validate()?;
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        if !(s.scale_factor > 0.0) {
            return Err(IngestError::InvalidScaleFactor {
                date: s.date,
                scale: s.scale_factor,
            });
        }
        let aod = if s.pixel_values.is_empty() {
            None
        } else {
            let sum: f64 = s.pixel_values.iter().map(|&p| p as f64).sum();
            Some(sum / s.pixel_values.len() as f64 * s.scale_factor)
        };
        out.push((s.date, aod));
    }
    out.sort_by_key(|(d, _)| *d);
    for w in out.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(IngestError::DuplicateDate(w[0].0));
        }
    }
    Ok(out)
}

/// Merges AOD onto the meteorological calendar and fills AOD gaps.
///
/// Interior gaps are filled linearly in time between the nearest valid
/// neighbours; leading and trailing gaps take the nearest valid value.
/// Filled rows carry `aod_interpolated = true`. Efficiency loss is left as
/// NaN for [`derive_efficiency_loss`].
pub fn merge_and_interpolate(
    meteo: &[RawMeteoRecord],
    aod: &[(NaiveDate, Option<f64>)],
) -> Result<Vec<MergedDailyRecord>> {
    let mut meteo: Vec<&RawMeteoRecord> = meteo.iter().collect();
    meteo.sort_by_key(|m| m.date);
    if let Some(w) = meteo.windows(2).find(|w| w[0].date == w[1].date) {
        return Err(IngestError::DuplicateDate(w[0].date));
    }
    let by_date: BTreeMap<NaiveDate, Option<f64>> = aod.iter().copied().collect();
    let observed: Vec<Option<f64>> = meteo
        .iter()
        .map(|m| by_date.get(&m.date).copied().flatten())
        .collect();
    let days: Vec<i64> = meteo
        .iter()
        .map(|m| m.date.signed_duration_since(NaiveDate::MIN).num_days())
        .collect();
    let filled = fill_gaps(&days, &observed)?;

    Ok(meteo
        .iter()
        .zip(filled)
        .map(|(m, (aod, interpolated))| MergedDailyRecord {
            date: m.date,
            t2m: m.t2m,
            t2mdew: m.t2mdew,
            ws2m: m.ws2m,
            qv2m: m.qv2m,
            ps: m.ps,
            irradiance_clear_sky: m.irradiance_clear_sky,
            irradiance_actual: m.irradiance_actual,
            aod,
            aod_interpolated: interpolated,
            efficiency_loss_pct: f64::NAN,
        })
        .collect())
}

fn fill_gaps(positions: &[i64], values: &[Option<f64>]) -> Result<Vec<(f64, bool)>> {
    let valid: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    let (&first, &last) = match (valid.first(), valid.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(IngestError::NoValidAod),
    };

    let mut out = Vec::with_capacity(values.len());
    let mut next_valid = 0usize;
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = v {
            out.push((*v, false));
            next_valid += 1;
            continue;
        }
        let filled = if i < first {
            values[first].unwrap()
        } else if i > last {
            values[last].unwrap()
        } else {
            let lo = valid[next_valid - 1];
            let hi = valid[next_valid];
            let (a, b) = (values[lo].unwrap(), values[hi].unwrap());
            let span = (positions[hi] - positions[lo]) as f64;
            let t = (positions[i] - positions[lo]) as f64 / span;
            a + (b - a) * t
        };
        out.push((filled, true));
    }
    Ok(out)
}

/// Fills `efficiency_loss_pct` from the two irradiance columns.
pub fn derive_efficiency_loss(records: &[MergedDailyRecord]) -> Result<Vec<MergedDailyRecord>> {
    records
        .iter()
        .map(|r| {
            let loss = physics::efficiency_loss_pct(r.irradiance_clear_sky, r.irradiance_actual)
                .map_err(|_| IngestError::ZeroClearSkyIrradiance(r.date))?;
            Ok(MergedDailyRecord {
                efficiency_loss_pct: loss,
                ..r.clone()
            })
        })
        .collect()
}

/// Runs aggregation, merge, gap filling and loss derivation in one go.
pub fn curate(
    meteo: &[RawMeteoRecord],
    samples: &[RawAodSample],
    roi: &RegionOfInterest,
) -> Result<Vec<MergedDailyRecord>> {
    let aod = aggregate_aod(samples, roi)?;
    let merged = merge_and_interpolate(meteo, &aod)?;
    derive_efficiency_loss(&merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, d).unwrap()
    }

    fn roi() -> RegionOfInterest {
        RegionOfInterest::new("test", 24.7, 55.4, 25.0).unwrap()
    }

    fn meteo(n: u32) -> Vec<RawMeteoRecord> {
        (1..=n)
            .map(|d| RawMeteoRecord {
                date: day(d),
                t2m: 25.0,
                t2mdew: 12.0,
                ws2m: 3.0,
                qv2m: 10.0,
                ps: 100.9,
                irradiance_clear_sky: 1000.0,
                irradiance_actual: 800.0,
            })
            .collect()
    }

    fn sample(d: u32, pixels: &[i32]) -> RawAodSample {
        RawAodSample {
            date: day(d),
            pixel_values: pixels.to_vec(),
            scale_factor: DEFAULT_AOD_SCALE,
        }
    }

    #[test]
    fn region_bounds() {
        assert!(RegionOfInterest::new("x", 91.0, 0.0, 1.0).is_err());
        assert!(RegionOfInterest::new("x", 0.0, -181.0, 1.0).is_err());
        assert!(RegionOfInterest::new("x", 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let out = aggregate_aod(&[sample(2, &[400]), sample(1, &[500, 700]), sample(3, &[])], &roi()).unwrap();
        assert_eq!(out[0].0, day(1));
        assert_abs_diff_eq!(out[0].1.unwrap(), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1].1.unwrap(), 0.4, epsilon = 1e-12);
        assert_eq!(out[2].1, None);

        let mut bad = sample(1, &[1]);
        bad.scale_factor = -0.001;
        assert!(matches!(
            aggregate_aod(&[bad], &roi()),
            Err(IngestError::InvalidScaleFactor { .. })
        ));
    }

    #[test]
    fn interior_gap_is_linear() {
        let aod = vec![(day(1), Some(0.2)), (day(2), None), (day(3), Some(0.4))];
        let merged = merge_and_interpolate(&meteo(3), &aod).unwrap();
        assert_abs_diff_eq!(merged[1].aod, 0.3, epsilon = 1e-12);
        assert!(merged[1].aod_interpolated);
        assert!(!merged[0].aod_interpolated && !merged[2].aod_interpolated);
    }

    #[test]
    fn edge_gaps_take_nearest_value() {
        let aod = vec![(day(1), None), (day(2), Some(0.5)), (day(3), Some(0.5))];
        let merged = merge_and_interpolate(&meteo(3), &aod).unwrap();
        assert_eq!(merged[0].aod, 0.5);
        assert!(merged[0].aod_interpolated);

        // Days absent from the AOD list count as missing, too.
        let merged = merge_and_interpolate(&meteo(4), &[(day(2), Some(0.3))]).unwrap();
        assert!(merged.iter().all(|r| r.aod == 0.3));
        assert_eq!(merged.iter().filter(|r| r.aod_interpolated).count(), 3);
    }

    #[test]
    fn all_missing_is_an_error() {
        let aod = vec![(day(1), None), (day(2), None)];
        assert!(matches!(
            merge_and_interpolate(&meteo(2), &aod),
            Err(IngestError::NoValidAod)
        ));
    }

    #[test]
    fn efficiency_loss_column() {
        let mut m = meteo(2);
        m[1].irradiance_actual = 1000.0;
        let merged = merge_and_interpolate(&m, &[(day(1), Some(0.1))]).unwrap();
        let derived = derive_efficiency_loss(&merged).unwrap();
        assert_abs_diff_eq!(derived[0].efficiency_loss_pct, 20.0, epsilon = 1e-12);
        assert_eq!(derived[1].efficiency_loss_pct, 0.0);

        let mut zero = merged.clone();
        zero[1].irradiance_clear_sky = 0.0;
        match derive_efficiency_loss(&zero) {
            Err(IngestError::ZeroClearSkyIrradiance(d)) => assert_eq!(d, day(2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn merge_invariants(values in proptest::collection::vec(proptest::option::of(0.0f64..3.0), 1..40)) {
            prop_assume!(values.iter().any(Option::is_some));
            let n = values.len() as u32;
            let m = meteo(n.min(31));
            let aod: Vec<_> = values.iter().take(m.len()).enumerate()
                .map(|(i, v)| (day(i as u32 + 1), *v)).collect();
            prop_assume!(aod.iter().any(|(_, v)| v.is_some()));
            let merged = merge_and_interpolate(&m, &aod).unwrap();

            // Calendar preserved.
            prop_assert_eq!(merged.len(), m.len());
            for (r, src) in merged.iter().zip(&m) {
                prop_assert_eq!(r.date, src.date);
            }
            // Unflagged rows are exact source values.
            for (r, (_, v)) in merged.iter().zip(&aod) {
                if !r.aod_interpolated {
                    prop_assert_eq!(Some(r.aod), *v);
                }
                prop_assert!(r.aod >= 0.0);
            }
            // Idempotent on its own output.
            let again: Vec<_> = merged.iter().map(|r| (r.date, Some(r.aod))).collect();
            let merged2 = merge_and_interpolate(&m, &again).unwrap();
            for (a, b) in merged.iter().zip(&merged2) {
                prop_assert_eq!(a.aod, b.aod);
                prop_assert!(!b.aod_interpolated);
            }
            // Loss column satisfies the defining algebra.
            for r in derive_efficiency_loss(&merged).unwrap() {
                let expect = 100.0 * (r.irradiance_clear_sky - r.irradiance_actual) / r.irradiance_clear_sky;
                prop_assert!((r.efficiency_loss_pct - expect).abs() < 1e-9);
            }
        }
    }
}
