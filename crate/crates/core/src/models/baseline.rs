use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{evaluate_metrics, fit_efficiency_regressor, MetricsReport, ModelError, ModelFamily, RegressorConfig, Result, StaticRegressor};
use crate::features::Stage2Dataset;

pub const BASELINE_CSV_HEADER: &str = "family,rmse,mae,r2,n_test";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub family: ModelFamily,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineTable {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub rows: Vec<BaselineRow>,
}

impl BaselineTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(BASELINE_CSV_HEADER.split(','))?;
        for row in &self.rows {
            let m = &row.metrics;
            w.write_record([
                row.family.name().to_string(),
                m.rmse.to_string(),
                m.mae.to_string(),
                m.r2.map_or_else(String::new, |r| r.to_string()),
                m.n.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for BaselineTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>12} {:>12} {:>12}", "model", "RMSE", "MAE", "R2")?;
        writeln!(f, "{}", "-".repeat(63))?;
        for row in &self.rows {
            let m = &row.metrics;
            writeln!(f, "{:<24} {:>12.6} {:>12.6} {:>12}", row.family.name(), m.rmse, m.mae, m.r2_display())?;
        }
        write!(f, "train rows {}, test rows {}, seed {}", self.n_train, self.n_test, self.seed)
    }
}

/// Resolves family names to their committed default configurations.
pub fn baseline_configs<S: AsRef<str>>(names: &[S]) -> Result<Vec<RegressorConfig>> {
    names
        .iter()
        .map(|n| n.as_ref().parse().map(RegressorConfig::default_for))
        .collect()
}

/// Fits every family on the same chronological split and scores the hold-out.
pub fn run_baseline_comparison(
    stage2: &Stage2Dataset,
    families: &[RegressorConfig],
    test_fraction: f64,
    seed: u64,
) -> Result<BaselineTable> {
    if families.len() < 2 {
        return Err(ModelError::TooFewFamilies(families.len()));
    }
    if stage2.is_empty() {
        return Err(ModelError::EmptyDataset("stage-2"));
    }
    let (train, test) = stage2.split(test_fraction)?;
    let x_test = test.feature_matrix();
    let y_test = test.targets();
    let rows = families
        .iter()
        .map(|config| {
            let model = fit_efficiency_regressor(StaticRegressor::new(config.clone().with_seed(seed)), &train)?;
            Ok(BaselineRow {
                family: config.family(),
                metrics: evaluate_metrics(&y_test, &model.predict_many(&x_test)?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BaselineTable {
        n_train: train.len(),
        n_test: test.len(),
        seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Stage2Row, StaticFeatures};
    use chrono::NaiveDate;

    fn dataset(n: usize) -> Stage2Dataset {
        let start = NaiveDate::from_ymd_opt(2012, 3, 1).unwrap();
        let rows = (0..n)
            .map(|i| {
                let aod = 0.5 + 0.2 * (i as f64 * 0.21).sin();
                let clear = 330.0 + 20.0 * (i as f64 * 0.017).cos();
                let actual = clear * (-aod * 1.1f64).exp();
                Stage2Row {
                    date: start + chrono::Days::new(i as u64),
                    predicted_aod: aod,
                    irradiance_actual: actual,
                    irradiance_clear_sky: clear,
                    static_features: StaticFeatures {
                        t2m: 30.0,
                        t2mdew: 12.0,
                        ws2m: 3.0 + (i % 5) as f64,
                        qv2m: 9.0,
                        ps: 100.0,
                        month: 3,
                    },
                    target_efficiency_loss_pct: 100.0 * (clear - actual) / clear,
                }
            })
            .collect();
        Stage2Dataset { rows }
    }

    #[test]
    fn five_family_table() {
        let names = ["linear", "random-forest", "svm", "mlp", "xgboost"];
        let table = run_baseline_comparison(&dataset(200), &baseline_configs(&names).unwrap(), 0.2, 1).unwrap();
        assert_eq!(table.rows.len(), 5);
        assert_eq!((table.n_train, table.n_test), (160, 40));
        for row in &table.rows {
            assert!(row.metrics.rmse.is_finite() && row.metrics.mae.is_finite());
        }
        let mut csv = Vec::new();
        table.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with(BASELINE_CSV_HEADER));
        assert!(table.to_string().contains("support-vector"));
    }

    #[test]
    fn guards() {
        let one = baseline_configs(&["linear"]).unwrap();
        assert!(matches!(run_baseline_comparison(&dataset(50), &one, 0.2, 1), Err(ModelError::TooFewFamilies(1))));
        assert!(matches!(baseline_configs(&["linear", "prophet"]), Err(ModelError::UnknownFamily(_))));
    }
}
