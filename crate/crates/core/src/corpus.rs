//! Synthetic labeled corpora and the on-disk corpus layout.
//!
//! A corpus directory holds one `<series_id>.csv` (`timestamp,value`) per
//! series plus a `labels.csv` with `series_id,index,is_anomaly` rows.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_series_csv, write_series_csv};
use crate::series::{LabeledSeries, TimeSeries};

pub const LABELS_FILE: &str = "labels.csv";
pub const DEFAULT_ANOMALY_RATIO: f64 = 0.075;
const HOURLY: i64 = 3600;
const DAILY_PERIOD: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub seasonal: usize,
    pub trend: usize,
    pub level: usize,
    pub length: usize,
    pub anomaly_ratio: f64,
    pub start: i64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            seasonal: 10,
            trend: 10,
            level: 10,
            length: 336,
            anomaly_ratio: DEFAULT_ANOMALY_RATIO,
            start: 1_600_000_000,
        }
    }
}

impl CorpusSpec {
    pub fn mix(seasonal: usize, trend: usize, level: usize) -> Self {
        Self {
            seasonal,
            trend,
            level,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.anomaly_ratio) {
            return Err(Error::BadSpec(format!(
                "anomaly_ratio {} outside [0, 0.5)",
                self.anomaly_ratio
            )));
        }
        if self.length < 2 * DAILY_PERIOD {
            return Err(Error::BadSpec(format!(
                "length {} shorter than {}",
                self.length,
                2 * DAILY_PERIOD
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Seasonal,
    Trend,
    Level,
}

impl Family {
    fn name(self) -> &'static str {
        match self {
            Family::Seasonal => "seasonal",
            Family::Trend => "trend",
            Family::Level => "level",
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Injection {
    Spike,
    Dip,
    LevelShift,
}

/// Generates `seasonal + trend + level` series in that order.
pub fn gen_corpus(spec: &CorpusSpec, seed: u64) -> Result<Vec<LabeledSeries>> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = [
        (Family::Seasonal, spec.seasonal),
        (Family::Trend, spec.trend),
        (Family::Level, spec.level),
    ];
    let mut out = Vec::with_capacity(spec.seasonal + spec.trend + spec.level);
    for (family, count) in plan {
        for _ in 0..count {
            let id = format!("{}-{:03}", family.name(), out.len());
            out.push(gen_series(&mut rng, family, spec, id)?);
        }
    }
    Ok(out)
}

fn gen_series(
    rng: &mut ChaCha8Rng,
    family: Family,
    spec: &CorpusSpec,
    id: String,
) -> Result<LabeledSeries> {
    let n = spec.length;
    let sigma = rng.random_range(0.5..1.5);
    let noise = Normal::new(0.0, sigma).expect("positive sigma");
    let base = rng.random_range(20.0..80.0);
    let mut values: Vec<f64> = match family {
        Family::Seasonal => {
            let amp = rng.random_range(6.0..14.0) * sigma;
            let phase = rng.random_range(0.0..2.0 * PI);
            (0..n)
                .map(|t| base + amp * (2.0 * PI * t as f64 / DAILY_PERIOD as f64 + phase).sin())
                .collect()
        }
        Family::Trend => {
            let slope = rng.random_range(-0.1..0.1);
            let drift = Normal::new(0.0, 0.2 * sigma).expect("positive sigma");
            let mut walk = 0.0;
            (0..n)
                .map(|t| {
                    walk += drift.sample(rng);
                    base + slope * t as f64 + walk
                })
                .collect()
        }
        Family::Level => {
            let mut v = Vec::with_capacity(n);
            let mut level = base;
            let mut remaining = 0usize;
            for _ in 0..n {
                if remaining == 0 {
                    level += rng.random_range(-6.0..6.0) * sigma;
                    remaining = rng.random_range(n / 12..n / 4);
                }
                v.push(level);
                remaining -= 1;
            }
            v
        }
    };
    for v in values.iter_mut() {
        *v += noise.sample(rng);
    }

    let labels = inject(rng, family, &mut values, sigma, spec.anomaly_ratio);
    let series = TimeSeries::from_values(spec.start, HOURLY, values)?;
    LabeledSeries::new(id, series, labels)
}

/// Places non-touching anomaly segments until the target count is reached.
fn inject(
    rng: &mut ChaCha8Rng,
    family: Family,
    values: &mut [f64],
    sigma: f64,
    ratio: f64,
) -> Vec<bool> {
    let n = values.len();
    let mut labels = vec![false; n];
    let target = (ratio * n as f64).round() as usize;
    let margin = DAILY_PERIOD.min(n / 4);
    let mut placed = 0;
    let mut attempts = 0;
    while placed < target && attempts < 50 * n {
        attempts += 1;
        let kind = match (family, rng.random_range(0..10)) {
            (Family::Level, 0..=5) | (Family::Trend, 0..=2) | (Family::Seasonal, 0..=1) => {
                Injection::LevelShift
            }
            (_, r) if r % 2 == 0 => Injection::Spike,
            _ => Injection::Dip,
        };
        let len = match kind {
            Injection::LevelShift => rng.random_range(3..=10),
            _ => rng.random_range(1..=2),
        }
        .min(target - placed);
        if len == 0 {
            break;
        }
        let start = rng.random_range(margin..n - len);
        let lo = start.saturating_sub(2);
        let hi = (start + len + 2).min(n);
        if labels[lo..hi].iter().any(|&l| l) {
            continue;
        }
        let magnitude = rng.random_range(3.0..9.0) * sigma;
        let delta = match kind {
            Injection::Spike => magnitude,
            Injection::Dip => -magnitude,
            Injection::LevelShift => {
                if rng.random_bool(0.5) {
                    magnitude
                } else {
                    -magnitude
                }
            }
        };
        for i in start..start + len {
            values[i] += delta;
            labels[i] = true;
        }
        placed += len;
    }
    labels
}

/// Writes the corpus directory, creating it if needed.
pub fn write_corpus(dir: &Path, corpus: &[LabeledSeries]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let labels_path = dir.join(LABELS_FILE);
    let mut labels = csv::Writer::from_path(&labels_path).map_err(|e| csv_err(&labels_path, e))?;
    labels
        .write_record(["series_id", "index", "is_anomaly"])
        .map_err(|e| csv_err(&labels_path, e))?;
    for s in corpus {
        check_id(&s.id)?;
        write_series_csv(&dir.join(format!("{}.csv", s.id)), &s.series)?;
        for (i, &l) in s.labels.iter().enumerate() {
            labels
                .write_record([s.id.as_str(), &i.to_string(), if l { "1" } else { "0" }])
                .map_err(|e| csv_err(&labels_path, e))?;
        }
    }
    labels.flush().map_err(|e| Error::io(&labels_path, e))?;
    Ok(())
}

/// Ids double as file stems: ASCII letters, digits, `-`, `_` and `.`, not
/// starting with a dot and not the reserved `labels`.
pub fn valid_series_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id != "labels"
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
}

fn check_id(id: &str) -> Result<()> {
    if valid_series_id(id) {
        Ok(())
    } else {
        Err(Error::Parse(format!("invalid series id {id:?}")))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse(format!("{}: {e}", path.display()))
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

/// Reads a corpus directory; series are returned sorted by id. Points absent
/// from `labels.csv` are normal.
pub fn read_corpus(dir: &Path) -> Result<Vec<LabeledSeries>> {
    let mut series = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if stem == "labels" {
            continue;
        }
        series.insert(stem.to_string(), read_series_csv(&path)?);
    }

    let labels_path = dir.join(LABELS_FILE);
    let mut flags: HashMap<String, Vec<bool>> = series
        .iter()
        .map(|(id, s)| (id.clone(), vec![false; s.len()]))
        .collect();
    if labels_path.exists() {
        let mut reader =
            csv::Reader::from_path(&labels_path).map_err(|e| csv_err(&labels_path, e))?;
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| csv_err(&labels_path, e))?;
            let bad = || Error::Parse(format!("{}: bad row {}", labels_path.display(), row + 2));
            let (id, index, flag) = match (record.get(0), record.get(1), record.get(2)) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => return Err(bad()),
            };
            let index: usize = index.trim().parse().map_err(|_| bad())?;
            let flag = parse_flag(flag).ok_or_else(bad)?;
            let target = flags
                .get_mut(id)
                .ok_or_else(|| Error::Parse(format!("labels reference unknown series {id:?}")))?;
            let len = target.len();
            *target.get_mut(index).ok_or(Error::OutOfRange {
                value: index as f64,
                min: 0.0,
                max: len as f64 - 1.0,
            })? = flag;
        }
    }

    series
        .into_iter()
        .map(|(id, s)| {
            let labels = flags.remove(&id).unwrap_or_default();
            LabeledSeries::new(id, s, labels)
        })
        .collect()
}

/// Overall fraction of anomalous points.
pub fn anomaly_ratio(corpus: &[LabeledSeries]) -> f64 {
    let total: usize = corpus.iter().map(|s| s.labels.len()).sum();
    if total == 0 {
        return 0.0;
    }
    corpus.iter().map(|s| s.anomaly_count()).sum::<usize>() as f64 / total as f64
}
