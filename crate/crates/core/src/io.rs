//! Series ingestion from CSV and JSON.
//!
//! Timestamps are epoch seconds or RFC 3339 strings. Empty or `NaN` values
//! are read as missing and left to [`validate`] to repair.

use std::fs::File;
use std::path::Path;

use chrono::DateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{validate, TimeSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawTimestamp {
    Epoch(i64),
    Text(String),
}

impl RawTimestamp {
    pub fn to_epoch(&self) -> Result<i64> {
        match self {
            RawTimestamp::Epoch(t) => Ok(*t),
            RawTimestamp::Text(s) => parse_timestamp(s),
        }
    }
}

/// A point as it arrives over the wire; `value` may be null for a missing
/// reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPoint {
    pub timestamp: RawTimestamp,
    pub value: Option<f64>,
}

pub fn parse_timestamp(s: &str) -> Result<i64> {
    let s = s.trim();
    if let Ok(t) = s.parse::<i64>() {
        return Ok(t);
    }
    DateTime::parse_from_rfc3339(s)
        .map(|d| d.timestamp())
        .map_err(|e| Error::Parse(format!("timestamp {s:?}: {e}")))
}

fn parse_value(s: &str) -> Result<f64> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    s.parse::<f64>()
        .map_err(|_| Error::Parse(format!("value {s:?} is not a number")))
}

pub fn points_from_raw(raw: &[RawPoint]) -> Result<Vec<(i64, f64)>> {
    raw.iter()
        .map(|p| Ok((p.timestamp.to_epoch()?, p.value.unwrap_or(f64::NAN))))
        .collect()
}

/// Reads `timestamp,value` rows. A header row is skipped when its first
/// field is not a timestamp.
pub fn read_points_csv<R: std::io::Read>(reader: R) -> Result<Vec<(i64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut points = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        if record.len() < 2 {
            return Err(Error::Parse(format!(
                "row {}: expected timestamp,value",
                row + 1
            )));
        }
        let ts = match parse_timestamp(&record[0]) {
            Ok(t) => t,
            Err(_) if row == 0 => continue,
            Err(e) => return Err(e),
        };
        points.push((ts, parse_value(&record[1])?));
    }
    Ok(points)
}

pub fn read_series_csv(path: &Path) -> Result<TimeSeries> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let points =
        read_points_csv(file).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    validate(&points)
}

/// Accepts either `[{"timestamp":..,"value":..}, ..]` or `{"points": [..]}`.
pub fn read_points_json(text: &str) -> Result<Vec<(i64, f64)>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Doc {
        Bare(Vec<RawPoint>),
        Wrapped { points: Vec<RawPoint> },
    }
    let doc: Doc = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    match doc {
        Doc::Bare(p) | Doc::Wrapped { points: p } => points_from_raw(&p),
    }
}

/// Picks the reader by extension: `.json` or anything else as CSV.
pub fn read_series(path: &Path) -> Result<TimeSeries> {
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        validate(&read_points_json(&text)?)
    } else {
        read_series_csv(path)
    }
}

pub fn write_series_csv(path: &Path, series: &TimeSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| Error::Parse(format!("{}: {e}", path.display()));
    w.write_record(["timestamp", "value"]).map_err(err)?;
    for (t, v) in series.points() {
        w.write_record([t.to_string(), v.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
