use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

/// Hold-out scores. `r2` is `None` when the targets have zero variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub mae: f64,
    pub r2: Option<f64>,
    pub n: usize,
}

impl MetricsReport {
    pub fn r2_display(&self) -> String {
        self.r2.map_or_else(|| "undefined".to_string(), |r| format!("{r:.6}"))
    }
}

pub fn evaluate_metrics(y: &[f64], y_hat: &[f64]) -> Result<MetricsReport> {
    if y.len() != y_hat.len() {
        return Err(ModelError::ShapeMismatch {
            rows: y_hat.len(),
            targets: y.len(),
        });
    }
    let n = y.len();
    if n < 2 {
        return Err(ModelError::TooFewSamples { needed: 2, got: n });
    }
    let nf = n as f64;
    let mean = y.iter().sum::<f64>() / nf;
    let (mut ss_res, mut abs, mut ss_tot) = (0.0, 0.0, 0.0);
    for (t, p) in y.iter().zip(y_hat) {
        let e = t - p;
        ss_res += e * e;
        abs += e.abs();
        ss_tot += (t - mean) * (t - mean);
    }
    Ok(MetricsReport {
        rmse: (ss_res / nf).sqrt(),
        mae: abs / nf,
        r2: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        let m = evaluate_metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.rmse, m.mae, m.r2), (0.0, 0.0, Some(1.0)));

        let m = evaluate_metrics(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!((m.rmse - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((m.mae - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.r2, Some(0.0));
    }

    #[test]
    fn guards() {
        assert!(matches!(evaluate_metrics(&[1.0, 2.0], &[1.0]), Err(ModelError::ShapeMismatch { .. })));
        assert!(matches!(evaluate_metrics(&[1.0], &[1.0]), Err(ModelError::TooFewSamples { .. })));
        let m = evaluate_metrics(&[4.0; 5], &[4.0, 4.1, 3.9, 4.0, 4.0]).unwrap();
        assert_eq!(m.r2, None);
        assert_eq!(m.r2_display(), "undefined");
    }

    proptest! {
        #[test]
        fn r2_is_one_only_for_exact_predictions(
            y in proptest::collection::vec(-10.0f64..10.0, 3..30),
            k in 0usize..30,
            delta in 1e-3f64..1.0,
        ) {
            let m = evaluate_metrics(&y, &y).unwrap();
            if m.r2.is_some() {
                prop_assert!((m.r2.unwrap() - 1.0).abs() <= 1e-12);
                let mut off = y.clone();
                let k = k % y.len();
                off[k] += delta;
                let r2 = evaluate_metrics(&y, &off).unwrap().r2.unwrap();
                prop_assert!(r2 < 1.0 - 1e-12);
            }
            prop_assert!(m.rmse >= 0.0 && m.mae >= 0.0);
        }
    }
}
