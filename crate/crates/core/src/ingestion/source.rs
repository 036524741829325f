use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use super::{IngestError, MergedDailyRecord, RawAodSample, RawMeteoRecord, RegionOfInterest, Result};

pub const METEO_HEADER: [&str; 8] = [
    "date", "t2m", "t2mdew", "ws2m", "qv2m", "ps", "irr_clear", "irr_actual",
];
pub const AOD_HEADER: [&str; 3] = ["date", "pixel_values", "scale_factor"];
pub const MERGED_HEADER: [&str; 11] = [
    "date",
    "t2m",
    "t2mdew",
    "ws2m",
    "qv2m",
    "ps",
    "irr_clear",
    "irr_actual",
    "aod",
    "aod_interpolated",
    "efficiency_loss_pct",
];

const UNITS_COMMENT: &str =
    "# units: t2m,t2mdew=degC ws2m=m/s qv2m=g/kg ps=kPa irr_*=W/m2 aod=dimensionless efficiency_loss_pct=percent";

/// Where raw data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// A committed CSV file in the exchange format.
    Fixture(PathBuf),
    /// An HTTP endpoint answering `?start=YYYY-MM-DD&end=YYYY-MM-DD&lat=..&lon=..`
    /// with the same CSV exchange format. Requires the `live` feature.
    Http(String),
}

impl DataSource {
    /// `http://` and `https://` strings resolve to [`DataSource::Http`], anything else to a fixture path.
    pub fn parse(s: &str) -> Self {
        if s.starts_with("http://") || s.starts_with("https://") {
            Self::Http(s.to_string())
        } else {
            Self::Fixture(PathBuf::from(s))
        }
    }

    fn open(&self, roi: &RegionOfInterest, start: NaiveDate, end: NaiveDate) -> Result<Box<dyn Read>> {
        match self {
            Self::Fixture(path) => File::open(path)
                .map(|f| Box::new(f) as Box<dyn Read>)
                .map_err(|e| IngestError::SourceUnreachable(format!("{}: {e}", path.display()))),
            Self::Http(url) => http_get(url, roi, start, end),
        }
    }
}

#[cfg(feature = "live")]
fn http_get(url: &str, roi: &RegionOfInterest, start: NaiveDate, end: NaiveDate) -> Result<Box<dyn Read>> {
    let query = format!(
        "{url}?start={start}&end={end}&lat={}&lon={}",
        roi.center_lat, roi.center_lon
    );
    let resp = reqwest::blocking::get(&query)
        .and_then(|r| r.error_for_status())
        .map_err(|e| IngestError::SourceUnreachable(format!("{query}: {e}")))?;
    let body = resp
        .bytes()
        .map_err(|e| IngestError::SourceUnreachable(format!("{query}: {e}")))?;
    Ok(Box::new(std::io::Cursor::new(body.to_vec())))
}

#[cfg(not(feature = "live"))]
fn http_get(url: &str, _roi: &RegionOfInterest, _start: NaiveDate, _end: NaiveDate) -> Result<Box<dyn Read>> {
    Err(IngestError::SourceUnreachable(format!(
        "{url}: built without the `live` feature"
    )))
}

/// Fetches one meteorological record per day in `[start, end]`, sorted.
pub fn fetch_meteo(
    source: &DataSource,
    roi: &RegionOfInterest,
    start: NaiveDate,
    end: NaiveDate,
) -> Result<Vec<RawMeteoRecord>> {
    roi.validate()?;
    if start > end {
        return Err(IngestError::EmptyRange { start, end });
    }
    let all = read_meteo_csv(source.open(roi, start, end)?)?;
    let mut in_range: Vec<_> = all
        .into_iter()
        .filter(|r| r.date >= start && r.date <= end)
        .collect();
    if in_range.is_empty() {
        return Err(IngestError::EmptyRange { start, end });
    }
    in_range.sort_by_key(|r| r.date);
    let mut expected = start;
    for r in &in_range {
        if r.date < expected {
            return Err(IngestError::DuplicateDate(r.date));
        }
        if r.date > expected {
            return Err(IngestError::MissingDay(expected));
        }
        expected = expected.succ_opt().unwrap_or(expected);
    }
    if in_range.last().map(|r| r.date) != Some(end) {
        return Err(IngestError::MissingDay(expected));
    }
    Ok(in_range)
}

/// Fetches AOD samples within `[start, end]`, sorted by date. Days may be absent.
pub fn fetch_aod(
    source: &DataSource,
    roi: &RegionOfInterest,
    start: NaiveDate,
    end: NaiveDate,
) -> Result<Vec<RawAodSample>> {
    roi.validate()?;
    if start > end {
        return Err(IngestError::EmptyRange { start, end });
    }
    let mut samples: Vec<_> = read_aod_csv(source.open(roi, start, end)?)?
        .into_iter()
        .filter(|s| s.date >= start && s.date <= end)
        .collect();
    samples.sort_by_key(|s| s.date);
    Ok(samples)
}

struct Columns {
    index: HashMap<String, usize>,
}

impl Columns {
    fn new<R: Read>(rdr: &mut csv::Reader<R>, required: &[&str]) -> Result<Self> {
        let headers = rdr.headers()?.clone();
        let index: HashMap<String, usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect();
        for name in required {
            if !index.contains_key(*name) {
                return Err(IngestError::MalformedRecord {
                    line: 1,
                    field: name.to_string(),
                    reason: "missing from header".into(),
                });
            }
        }
        Ok(Self { index })
    }

    fn str<'r>(&self, rec: &'r csv::StringRecord, name: &str) -> Result<&'r str> {
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        match rec.get(self.index[name]).map(str::trim) {
            Some(s) if !s.is_empty() => Ok(s),
            _ => Err(IngestError::MalformedRecord {
                line,
                field: name.to_string(),
                reason: "is missing".into(),
            }),
        }
    }

    fn parse<T: std::str::FromStr>(&self, rec: &csv::StringRecord, name: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let s = self.str(rec, name)?;
        s.parse().map_err(|e: T::Err| IngestError::MalformedRecord {
            line: rec.position().map(|p| p.line()).unwrap_or(0),
            field: name.to_string(),
            reason: format!("cannot parse {s:?}: {e}"),
        })
    }

    fn finite(&self, rec: &csv::StringRecord, name: &str) -> Result<f64> {
        let v: f64 = self.parse(rec, name)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(IngestError::MalformedRecord {
                line: rec.position().map(|p| p.line()).unwrap_or(0),
                field: name.to_string(),
                reason: "is not finite".into(),
            })
        }
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input)
}

pub fn read_meteo_csv<R: Read>(input: R) -> Result<Vec<RawMeteoRecord>> {
    let mut rdr = reader(input);
    let cols = Columns::new(&mut rdr, &METEO_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let r = RawMeteoRecord {
            date: cols.parse(&rec, "date")?,
            t2m: cols.finite(&rec, "t2m")?,
            t2mdew: cols.finite(&rec, "t2mdew")?,
            ws2m: cols.finite(&rec, "ws2m")?,
            qv2m: cols.finite(&rec, "qv2m")?,
            ps: cols.finite(&rec, "ps")?,
            irradiance_clear_sky: cols.finite(&rec, "irr_clear")?,
            irradiance_actual: cols.finite(&rec, "irr_actual")?,
        };
        for (name, v) in [("irr_clear", r.irradiance_clear_sky), ("irr_actual", r.irradiance_actual)] {
            if v < 0.0 {
                return Err(IngestError::MalformedRecord {
                    line: rec.position().map(|p| p.line()).unwrap_or(0),
                    field: name.into(),
                    reason: format!("is negative ({v})"),
                });
            }
        }
        out.push(r);
    }
    Ok(out)
}

pub fn read_aod_csv<R: Read>(input: R) -> Result<Vec<RawAodSample>> {
    let mut rdr = reader(input);
    let cols = Columns::new(&mut rdr, &["date", "pixel_values"])?;
    let has_scale = cols.index.contains_key("scale_factor");
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let date = cols.parse(&rec, "date")?;
        let raw = rec.get(cols.index["pixel_values"]).unwrap_or("").trim();
        let pixel_values = raw
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<i32>().map_err(|e| IngestError::MalformedRecord {
                    line,
                    field: "pixel_values".into(),
                    reason: format!("cannot parse {s:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let scale_factor = match rec.get(cols.index.get("scale_factor").copied().unwrap_or(usize::MAX)) {
            Some(s) if has_scale && !s.trim().is_empty() => cols.finite(&rec, "scale_factor")?,
            _ => super::DEFAULT_AOD_SCALE,
        };
        out.push(RawAodSample {
            date,
            pixel_values,
            scale_factor,
        });
    }
    Ok(out)
}

pub fn read_merged_csv<R: Read>(input: R) -> Result<Vec<MergedDailyRecord>> {
    let mut rdr = reader(input);
    let cols = Columns::new(&mut rdr, &MERGED_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(MergedDailyRecord {
            date: cols.parse(&rec, "date")?,
            t2m: cols.finite(&rec, "t2m")?,
            t2mdew: cols.finite(&rec, "t2mdew")?,
            ws2m: cols.finite(&rec, "ws2m")?,
            qv2m: cols.finite(&rec, "qv2m")?,
            ps: cols.finite(&rec, "ps")?,
            irradiance_clear_sky: cols.finite(&rec, "irr_clear")?,
            irradiance_actual: cols.finite(&rec, "irr_actual")?,
            aod: cols.finite(&rec, "aod")?,
            aod_interpolated: cols.parse(&rec, "aod_interpolated")?,
            efficiency_loss_pct: cols.parse(&rec, "efficiency_loss_pct")?,
        });
    }
    Ok(out)
}

pub fn write_meteo_csv<W: Write>(out: W, records: &[RawMeteoRecord]) -> Result<()> {
    let mut w = out;
    writeln!(w, "{UNITS_COMMENT}")?;
    let mut wtr = csv::Writer::from_writer(w);
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_aod_csv<W: Write>(out: W, samples: &[RawAodSample]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(AOD_HEADER)?;
    for s in samples {
        let pixels = s
            .pixel_values
            .iter()
            .map(i32::to_string)
            .collect::<Vec<_>>()
            .join(";");
        wtr.write_record([s.date.to_string(), pixels, s.scale_factor.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_merged_csv<W: Write>(out: W, records: &[MergedDailyRecord]) -> Result<()> {
    let mut w = out;
    writeln!(w, "{UNITS_COMMENT}")?;
    let mut wtr = csv::Writer::from_writer(w);
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Convenience: reads a merged CSV from disk.
pub fn load_merged(path: &Path) -> Result<Vec<MergedDailyRecord>> {
    read_merged_csv(File::open(path).map_err(|e| IngestError::SourceUnreachable(format!("{}: {e}", path.display())))?)
}
