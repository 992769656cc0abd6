//! Canonical time-series representation, ingestion-time validation and
//! sliding windows.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of trailing points visible when scoring the latest point.
pub const DEFAULT_WINDOW: usize = 29;

/// Fraction of gaps allowed to deviate from the dominant granularity before a
/// series is rejected. A single deviating gap is always tolerated.
pub const MAX_IRREGULAR_GAP_FRACTION: f64 = 0.05;

/// A uniformly spaced, fully finite time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    timestamps: Vec<i64>,
    values: Vec<f64>,
    granularity: i64,
    /// Indices whose value was filled by linear interpolation during validation.
    #[serde(default)]
    repaired: Vec<usize>,
}

impl TimeSeries {
    /// Builds a regular series starting at `start` with the given step.
    pub fn from_values(start: i64, granularity: i64, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if granularity <= 0 {
            return Err(Error::IrregularGranularity {
                irregular: 1,
                gaps: 1,
                granularity,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        let timestamps = (0..values.len() as i64)
            .map(|i| start + i * granularity)
            .collect();
        Ok(Self {
            timestamps,
            values,
            granularity,
            repaired: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    /// Sampling step in seconds.
    pub fn granularity(&self) -> i64 {
        self.granularity
    }

    pub fn repaired(&self) -> &[usize] {
        &self.repaired
    }

    pub fn was_repaired(&self) -> bool {
        !self.repaired.is_empty()
    }

    pub fn points(&self) -> Vec<(i64, f64)> {
        self.timestamps
            .iter()
            .copied()
            .zip(self.values.iter().copied())
            .collect()
    }

    /// Returns a copy with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// Copy of the trailing `len` points (or the whole series if shorter).
    pub fn tail(&self, len: usize) -> Self {
        let start = self.len().saturating_sub(len);
        Self {
            timestamps: self.timestamps[start..].to_vec(),
            values: self.values[start..].to_vec(),
            granularity: self.granularity,
            repaired: self
                .repaired
                .iter()
                .filter(|&&i| i >= start)
                .map(|i| i - start)
                .collect(),
        }
    }
}

/// A contiguous view of `len` points of a parent series.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    parent: &'a TimeSeries,
    start: usize,
    len: usize,
}

impl<'a> Window<'a> {
    pub fn start_index(&self) -> usize {
        self.start
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Index in the parent of the point this window scores.
    pub fn last_index(&self) -> usize {
        self.start + self.len - 1
    }

    pub fn values(&self) -> &'a [f64] {
        &self.parent.values[self.start..self.start + self.len]
    }

    pub fn parent(&self) -> &'a TimeSeries {
        self.parent
    }
}

/// A series with one ground-truth anomaly flag per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSeries {
    pub id: String,
    pub series: TimeSeries,
    pub labels: Vec<bool>,
}

impl LabeledSeries {
    pub fn new(id: impl Into<String>, series: TimeSeries, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != series.len() {
            return Err(Error::LengthMismatch {
                left: series.len(),
                right: labels.len(),
            });
        }
        Ok(Self {
            id: id.into(),
            series,
            labels,
        })
    }

    pub fn anomaly_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

/// Sorts, checks and repairs raw points into a [`TimeSeries`].
///
/// Gaps that are whole multiples of the dominant step are filled, as are
/// non-finite values with finite neighbours on both sides; both kinds of
/// repair are recorded in [`TimeSeries::repaired`].
pub fn validate(raw_points: &[(i64, f64)]) -> Result<TimeSeries> {
    if raw_points.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut points = raw_points.to_vec();
    points.sort_by_key(|&(t, _)| t);
    for pair in points.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::DuplicateTimestamp(pair[0].0));
        }
    }

    if points.len() == 1 {
        if !points[0].1.is_finite() {
            return Err(Error::NonFiniteValue(0));
        }
        return Ok(TimeSeries {
            timestamps: vec![points[0].0],
            values: vec![points[0].1],
            granularity: 1,
            repaired: Vec::new(),
        });
    }

    let gaps: Vec<i64> = points.windows(2).map(|p| p[1].0 - p[0].0).collect();
    let granularity = dominant_gap(&gaps);
    let irregular = gaps.iter().filter(|&&g| g != granularity).count();
    let allowed = ((gaps.len() as f64 * MAX_IRREGULAR_GAP_FRACTION).floor() as usize).max(1);
    if irregular > allowed || gaps.iter().any(|g| g % granularity != 0) {
        return Err(Error::IrregularGranularity {
            irregular,
            gaps: gaps.len(),
            granularity,
        });
    }

    let mut timestamps = Vec::with_capacity(points.len());
    let mut values = Vec::with_capacity(points.len());
    for (i, &(t, v)) in points.iter().enumerate() {
        if i > 0 {
            let steps = gaps[i - 1] / granularity;
            for s in 1..steps {
                timestamps.push(points[i - 1].0 + s * granularity);
                values.push(f64::NAN);
            }
        }
        timestamps.push(t);
        values.push(v);
    }

    let repaired = interpolate_missing(&mut values)?;
    Ok(TimeSeries {
        timestamps,
        values,
        granularity,
        repaired,
    })
}

/// Most frequent gap; ties resolve to the smaller gap.
fn dominant_gap(gaps: &[i64]) -> i64 {
    let mut counts: HashMap<i64, usize> = HashMap::new();
    for &g in gaps {
        *counts.entry(g).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(g, _)| g)
        .unwrap_or(1)
}

fn interpolate_missing(values: &mut [f64]) -> Result<Vec<usize>> {
    let mut repaired = Vec::new();
    let n = values.len();
    let mut i = 0;
    while i < n {
        if values[i].is_finite() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && !values[i].is_finite() {
            i += 1;
        }
        if start == 0 {
            return Err(Error::NonFiniteValue(0));
        }
        if i == n {
            return Err(Error::NonFiniteValue(start));
        }
        let left = values[start - 1];
        let right = values[i];
        let span = (i - start + 1) as f64;
        for (k, j) in (start..i).enumerate() {
            let frac = (k + 1) as f64 / span;
            values[j] = left + (right - left) * frac;
            repaired.push(j);
        }
    }
    Ok(repaired)
}

/// All stride-1 windows of length `omega`, ordered by their last index.
pub fn windows(series: &TimeSeries, omega: usize) -> Result<Vec<Window<'_>>> {
    if omega == 0 || series.len() < omega {
        return Err(Error::SeriesTooShort {
            needed: omega.max(1),
            got: series.len(),
        });
    }
    Ok((0..=series.len() - omega)
        .map(|start| Window {
            parent: series,
            start,
            len: omega,
        })
        .collect())
}

/// The trailing window of length `omega`.
pub fn last_window(series: &TimeSeries, omega: usize) -> Result<Window<'_>> {
    if omega == 0 || series.len() < omega {
        return Err(Error::SeriesTooShort {
            needed: omega.max(1),
            got: series.len(),
        });
    }
    Ok(Window {
        parent: series,
        start: series.len() - omega,
        len: omega,
    })
}
