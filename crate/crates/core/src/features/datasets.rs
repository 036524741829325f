use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{
    chronological_split, FeatureError, Result, SequenceFeatures, StaticFeatures, STAGE1_WARMUP,
    STAGE2_FEATURE_NAMES,
};
use crate::ingestion::MergedDailyRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Row {
    pub date: NaiveDate,
    pub static_features: StaticFeatures,
    pub sequence: SequenceFeatures,
    pub target_aod: f64,
    /// Propagated from ingestion: the target was gap-filled.
    pub aod_interpolated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage1Dataset {
    pub rows: Vec<Stage1Row>,
}

impl Stage1Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn static_matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.static_features.to_array().to_vec()).collect()
    }

    pub fn sequence_matrix(&self) -> Vec<[f64; 4]> {
        self.rows.iter().map(|r| r.sequence.to_array()).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.target_aod).collect()
    }

    pub fn split(&self, test_fraction: f64) -> Result<(Self, Self)> {
        let (a, b) = chronological_split(&self.rows, test_fraction)?;
        Ok((Self { rows: a }, Self { rows: b }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Row {
    pub date: NaiveDate,
    pub predicted_aod: f64,
    pub irradiance_actual: f64,
    pub irradiance_clear_sky: f64,
    pub static_features: StaticFeatures,
    pub target_efficiency_loss_pct: f64,
}

impl Stage2Row {
    /// Feature vector in [`STAGE2_FEATURE_NAMES`] order.
    pub fn features(&self) -> [f64; 9] {
        let s = &self.static_features;
        [
            self.predicted_aod,
            self.irradiance_actual,
            self.irradiance_clear_sky,
            s.t2m,
            s.t2mdew,
            s.ws2m,
            s.qv2m,
            s.ps,
            s.month as f64,
        ]
    }

    pub fn from_features(date: NaiveDate, f: &[f64], target: f64) -> Self {
        Self {
            date,
            predicted_aod: f[0],
            irradiance_actual: f[1],
            irradiance_clear_sky: f[2],
            static_features: StaticFeatures::from_slice(&f[3..9]),
            target_efficiency_loss_pct: target,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage2Dataset {
    pub rows: Vec<Stage2Row>,
}

impl Stage2Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn feature_matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.features().to_vec()).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.target_efficiency_loss_pct).collect()
    }

    pub fn split(&self, test_fraction: f64) -> Result<(Self, Self)> {
        let (a, b) = chronological_split(&self.rows, test_fraction)?;
        Ok((Self { rows: a }, Self { rows: b }))
    }

    /// Rows whose dates fall in `[from, to]`.
    pub fn between(&self, from: NaiveDate, to: NaiveDate) -> Self {
        Self {
            rows: self
                .rows
                .iter()
                .filter(|r| r.date >= from && r.date <= to)
                .cloned()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledDatasets {
    pub stage1: Stage1Dataset,
    pub stage2: Stage2Dataset,
    /// Records that produced no stage-1 row (warm-up).
    pub dropped_stage1: usize,
    /// Records that produced no stage-2 row (no prediction, or non-finite loss).
    pub dropped_stage2: usize,
}

/// Builds both stage datasets from curated records.
///
/// With `stage1_predictions` absent, stage 2 uses observed AOD; otherwise
/// only dates with a prediction yield a stage-2 row.
pub fn assemble_datasets(
    records: &[MergedDailyRecord],
    stage1_predictions: Option<&BTreeMap<NaiveDate, f64>>,
) -> Result<AssembledDatasets> {
    for w in records.windows(2) {
        if w[0].date.succ_opt() != Some(w[1].date) {
            return Err(FeatureError::NonConsecutiveDates {
                prev: w[0].date,
                next: w[1].date,
            });
        }
    }
    let aod: Vec<f64> = records.iter().map(|r| r.aod).collect();

    let stage1_rows: Vec<Stage1Row> = records
        .iter()
        .enumerate()
        .skip(STAGE1_WARMUP)
        .filter_map(|(i, r)| {
            let sequence = SequenceFeatures::from_history(&aod[..i])?;
            Some(Stage1Row {
                date: r.date,
                static_features: StaticFeatures::from_record(r),
                sequence,
                target_aod: r.aod,
                aod_interpolated: r.aod_interpolated,
            })
        })
        .collect();
    if stage1_rows.is_empty() {
        return Err(FeatureError::EmptyDataset("stage-1"));
    }

    let stage2_rows: Vec<Stage2Row> = records
        .iter()
        .filter_map(|r| {
            let predicted_aod = match stage1_predictions {
                Some(p) => *p.get(&r.date)?,
                None => r.aod,
            };
            if !r.efficiency_loss_pct.is_finite() || !predicted_aod.is_finite() {
                return None;
            }
            Some(Stage2Row {
                date: r.date,
                predicted_aod: predicted_aod.max(0.0),
                irradiance_actual: r.irradiance_actual,
                irradiance_clear_sky: r.irradiance_clear_sky,
                static_features: StaticFeatures::from_record(r),
                target_efficiency_loss_pct: r.efficiency_loss_pct,
            })
        })
        .collect();
    if stage2_rows.is_empty() {
        return Err(FeatureError::EmptyDataset("stage-2"));
    }

    Ok(AssembledDatasets {
        dropped_stage1: records.len() - stage1_rows.len(),
        dropped_stage2: records.len() - stage2_rows.len(),
        stage1: Stage1Dataset { rows: stage1_rows },
        stage2: Stage2Dataset { rows: stage2_rows },
    })
}

pub const STAGE1_CSV_HEADER: [&str; 13] = [
    "date",
    "t2m",
    "t2mdew",
    "ws2m",
    "qv2m",
    "ps",
    "month",
    "aod_lag2",
    "aod_lag1",
    "aod_roll3",
    "aod_roll7",
    "target_aod",
    "aod_interpolated",
];

pub const STAGE2_CSV_HEADER: [&str; 11] = [
    "date",
    "predicted_aod",
    "irr_actual",
    "irr_clear",
    "t2m",
    "t2mdew",
    "ws2m",
    "qv2m",
    "ps",
    "month",
    "target_efficiency_loss_pct",
];

pub fn write_stage1_csv<W: Write>(out: W, ds: &Stage1Dataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(STAGE1_CSV_HEADER)?;
    for r in &ds.rows {
        let mut rec = vec![r.date.to_string()];
        rec.extend(r.static_features.to_array().iter().map(f64::to_string));
        rec.extend(r.sequence.to_array().iter().map(f64::to_string));
        rec.push(r.target_aod.to_string());
        rec.push(r.aod_interpolated.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_stage2_csv<W: Write>(out: W, ds: &Stage2Dataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(STAGE2_CSV_HEADER)?;
    for r in &ds.rows {
        let mut rec = vec![r.date.to_string()];
        rec.extend(r.features().iter().map(f64::to_string));
        rec.push(r.target_efficiency_loss_pct.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a stage-2 snapshot, rejecting files that lack any feature column.
pub fn read_stage2_csv<R: Read>(input: R) -> Result<Stage2Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let idx = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| FeatureError::MissingColumn(name.to_string()))
    };
    let date_idx = idx("date")?;
    let feat_idx = STAGE2_FEATURE_NAMES
        .iter()
        .map(|name| idx(name))
        .collect::<Result<Vec<_>>>()?;
    let target_idx = idx("target_efficiency_loss_pct")?;

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize, column: &str| -> Result<f64> {
            let s = rec.get(i).unwrap_or("");
            s.parse::<f64>().map_err(|e| FeatureError::InvalidValue {
                column: column.to_string(),
                line,
                reason: format!("{s:?}: {e}"),
            })
        };
        let date: NaiveDate = rec
            .get(date_idx)
            .unwrap_or("")
            .parse()
            .map_err(|e: chrono::ParseError| FeatureError::InvalidValue {
                column: "date".into(),
                line,
                reason: e.to_string(),
            })?;
        let features = feat_idx
            .iter()
            .zip(STAGE2_FEATURE_NAMES)
            .map(|(&i, name)| field(i, name))
            .collect::<Result<Vec<_>>>()?;
        let target = field(target_idx, "target_efficiency_loss_pct")?;
        rows.push(Stage2Row::from_features(date, &features, target));
    }
    Ok(Stage2Dataset { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Days;

    fn records(n: usize) -> Vec<MergedDailyRecord> {
        let start = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        (0..n)
            .map(|i| MergedDailyRecord {
                date: start + Days::new(i as u64),
                t2m: 20.0 + i as f64,
                t2mdew: 10.0,
                ws2m: 3.0,
                qv2m: 9.0,
                ps: 101.0,
                irradiance_clear_sky: 300.0,
                irradiance_actual: 240.0,
                aod: 0.1 * (i + 1) as f64,
                aod_interpolated: i == 8,
                efficiency_loss_pct: 20.0,
            })
            .collect()
    }

    #[test]
    fn warmup_drops_rows() {
        let out = assemble_datasets(&records(10), None).unwrap();
        assert_eq!(out.stage1.len(), 10 - STAGE1_WARMUP);
        assert_eq!(out.dropped_stage1, STAGE1_WARMUP);
        assert_eq!(out.stage2.len(), 10);

        let first = &out.stage1.rows[0];
        assert_eq!(first.date, records(10)[7].date);
        assert!((first.sequence.aod_lag1 - 0.7).abs() < 1e-12);
        assert!((first.sequence.aod_lag2 - 0.6).abs() < 1e-12);
        assert!((first.sequence.aod_roll3 - 0.6).abs() < 1e-12);
        assert!((first.sequence.aod_roll7 - 0.4).abs() < 1e-12);
        assert!((first.target_aod - 0.8).abs() < 1e-12);
    }

    #[test]
    fn interpolated_flag_propagates() {
        let out = assemble_datasets(&records(10), None).unwrap();
        assert!(out.stage1.rows[1].aod_interpolated);
        assert!(!out.stage1.rows[0].aod_interpolated);
    }

    #[test]
    fn too_few_records() {
        assert!(matches!(
            assemble_datasets(&records(5), None),
            Err(FeatureError::EmptyDataset("stage-1"))
        ));
    }

    #[test]
    fn gap_in_calendar_is_rejected() {
        let mut r = records(10);
        r.remove(4);
        assert!(matches!(
            assemble_datasets(&r, None),
            Err(FeatureError::NonConsecutiveDates { .. })
        ));
    }

    #[test]
    fn predictions_replace_observed_aod() {
        let r = records(12);
        let preds: BTreeMap<_, _> = r[9..].iter().map(|x| (x.date, 9.9)).collect();
        let out = assemble_datasets(&r, Some(&preds)).unwrap();
        assert_eq!(out.stage2.len(), 3);
        assert_eq!(out.dropped_stage2, 9);
        assert!(out.stage2.rows.iter().all(|x| x.predicted_aod == 9.9));
    }

    #[test]
    fn stage2_csv_schema() {
        let ds = assemble_datasets(&records(10), None).unwrap().stage2;
        let mut buf = Vec::new();
        write_stage2_csv(&mut buf, &ds).unwrap();
        assert_eq!(read_stage2_csv(buf.as_slice()).unwrap(), ds);

        let text = String::from_utf8(buf).unwrap().replacen("predicted_aod", "aod_guess", 1);
        match read_stage2_csv(text.as_bytes()) {
            Err(FeatureError::MissingColumn(c)) => assert_eq!(c, "predicted_aod"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stage1_csv_has_header() {
        let ds = assemble_datasets(&records(10), None).unwrap().stage1;
        let mut buf = Vec::new();
        write_stage1_csv(&mut buf, &ds).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), STAGE1_CSV_HEADER.join(","));
        assert_eq!(text.lines().count(), ds.len() + 1);
    }
}
