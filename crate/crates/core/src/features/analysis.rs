//! Exploratory statistics over curated records.

use serde::{Deserialize, Serialize};

use super::{FeatureError, Result};
use crate::ingestion::MergedDailyRecord;

pub const CORRELATION_COLUMNS: [&str; 9] = [
    "t2m",
    "t2mdew",
    "ws2m",
    "qv2m",
    "ps",
    "irr_clear",
    "irr_actual",
    "aod",
    "efficiency_loss_pct",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub columns: Vec<String>,
    /// Row-major, `columns.len()` squared.
    pub values: Vec<Vec<f64>>,
    /// Zero-variance columns left out of the matrix.
    pub excluded_constant: Vec<String>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.columns.iter().position(|c| c == a)?;
        let j = self.columns.iter().position(|c| c == b)?;
        Some(self.values[i][j])
    }
}

fn column(records: &[MergedDailyRecord], name: &str) -> Vec<f64> {
    records
        .iter()
        .map(|r| match name {
            "t2m" => r.t2m,
            "t2mdew" => r.t2mdew,
            "ws2m" => r.ws2m,
            "qv2m" => r.qv2m,
            "ps" => r.ps,
            "irr_clear" => r.irradiance_clear_sky,
            "irr_actual" => r.irradiance_actual,
            "aod" => r.aod,
            "efficiency_loss_pct" => r.efficiency_loss_pct,
            _ => unreachable!("unknown column {name}"),
        })
        .collect()
}

/// Pearson correlation between every pair of numeric record columns.
pub fn pearson_matrix(records: &[MergedDailyRecord]) -> Result<CorrelationMatrix> {
    let named: Vec<(String, Vec<f64>)> = CORRELATION_COLUMNS
        .iter()
        .map(|c| (c.to_string(), column(records, c)))
        .collect();
    pearson_from_columns(named)
}

pub(crate) fn pearson_from_columns(named: Vec<(String, Vec<f64>)>) -> Result<CorrelationMatrix> {
    let n = named.first().map_or(0, |(_, v)| v.len());
    if n < 2 {
        return Err(FeatureError::TooFewRows(n));
    }
    let mut columns = Vec::new();
    let mut centered: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut excluded_constant = Vec::new();
    for (name, values) in named {
        let mean = values.iter().sum::<f64>() / n as f64;
        let dev: Vec<f64> = values.iter().map(|v| v - mean).collect();
        let norm = dev.iter().map(|d| d * d).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            excluded_constant.push(name);
        } else {
            columns.push(name);
            centered.push((dev, norm));
        }
    }
    let k = columns.len();
    let mut values = vec![vec![0.0; k]; k];
    for i in 0..k {
        values[i][i] = 1.0;
        for j in (i + 1)..k {
            let (a, na) = &centered[i];
            let (b, nb) = &centered[j];
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let r = (dot / (na * nb)).clamp(-1.0, 1.0);
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        columns,
        values,
        excluded_constant,
    })
}

/// Share of detrended variance explained by a periodic mean profile.
///
/// The series is detrended by least squares, the per-phase mean over
/// `period` is subtracted, and the result is
/// `1 − Var(residual) / Var(detrended)`, clamped to `[0, 1]`. Zero-variance
/// input yields 0.
pub fn seasonal_strength(series: &[f64], period: usize) -> Result<f64> {
    let n = series.len();
    if period == 0 {
        return Err(FeatureError::InvalidWindow);
    }
    if n < 2 * period {
        return Err(FeatureError::SeriesTooShort {
            needed: 2 * period,
            got: n,
        });
    }
    let nf = n as f64;
    let t_mean = (nf - 1.0) / 2.0;
    let y_mean = series.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, y) in series.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sxy += dt * (y - y_mean);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    let detrended: Vec<f64> = series
        .iter()
        .enumerate()
        .map(|(t, y)| y - y_mean - slope * (t as f64 - t_mean))
        .collect();

    let mut phase_sum = vec![0.0; period];
    let mut phase_count = vec![0usize; period];
    for (t, d) in detrended.iter().enumerate() {
        phase_sum[t % period] += d;
        phase_count[t % period] += 1;
    }
    let profile: Vec<f64> = phase_sum
        .iter()
        .zip(&phase_count)
        .map(|(s, &c)| s / c as f64)
        .collect();

    let var = |v: &mut dyn Iterator<Item = f64>| {
        let vals: Vec<f64> = v.collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64
    };
    let var_detrended = var(&mut detrended.iter().copied());
    if var_detrended <= f64::EPSILON * y_mean.abs().max(1.0) {
        return Ok(0.0);
    }
    let var_resid = var(&mut detrended
        .iter()
        .enumerate()
        .map(|(t, d)| d - profile[t % period]));
    Ok((1.0 - var_resid / var_detrended).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn named(cols: &[(&str, &[f64])]) -> Vec<(String, Vec<f64>)> {
        cols.iter().map(|(n, v)| (n.to_string(), v.to_vec())).collect()
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        let m = pearson_from_columns(named(&[("x", &x), ("y", &y)])).unwrap();
        assert_eq!(m.get("x", "x"), Some(1.0));
        assert!((m.get("x", "y").unwrap() - 1.0).abs() < 1e-12);

        let m = pearson_from_columns(named(&[("a", &[1.0, 2.0, 3.0]), ("b", &[3.0, 2.0, 1.0])])).unwrap();
        assert!((m.get("a", "b").unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_excludes_constant_and_needs_rows() {
        let m = pearson_from_columns(named(&[("a", &[1.0, 2.0, 3.0]), ("c", &[5.0, 5.0, 5.0])])).unwrap();
        assert_eq!(m.columns, vec!["a"]);
        assert_eq!(m.excluded_constant, vec!["c"]);
        assert!(matches!(
            pearson_from_columns(named(&[("a", &[1.0])])),
            Err(FeatureError::TooFewRows(1))
        ));
    }

    #[test]
    fn seasonal_strength_sine() {
        let s: Vec<f64> = (0..300)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 30.0).sin())
            .collect();
        assert!(seasonal_strength(&s, 30).unwrap() >= 0.99);
    }

    #[test]
    fn seasonal_strength_white_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let s: Vec<f64> = (0..300).map(|_| normal.sample(&mut rng)).collect();
        let strength = seasonal_strength(&s, 30).unwrap();
        assert!(strength <= 0.2, "strength {strength}");
    }

    #[test]
    fn seasonal_strength_degenerate() {
        assert_eq!(seasonal_strength(&[0.4; 90], 30).unwrap(), 0.0);
        assert!(matches!(
            seasonal_strength(&[0.0; 59], 30),
            Err(FeatureError::SeriesTooShort { .. })
        ));
    }
}
