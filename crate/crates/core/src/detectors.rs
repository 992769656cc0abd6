//! The candidate detectors: Spectral Residual, HBOS and seasonal-hybrid ESD.
//! Each exposes exactly one tunable parameter.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::series::TimeSeries;
use crate::stats;
use crate::transforms::{self, SrConfig, EPS};

/// Scale factor turning MAD into a consistent estimate of sigma.
const MAD_SCALE: f64 = 1.4826;
/// Significance of the generalized ESD test.
pub const ESD_ALPHA: f64 = 0.05;
pub const HBOS_MIN_LEN: usize = 8;
pub const SHESD_MIN_LEN: usize = 8;

const SR_GRID: [f64; 9] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0];
const HBOS_GRID: [f64; 6] = [0.90, 0.95, 0.97, 0.99, 0.995, 0.999];
const SHESD_GRID: [f64; 7] = [0.005, 0.01, 0.02, 0.05, 0.10, 0.15, 0.20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Sr,
    Hbos,
    Shesd,
}

impl DetectorKind {
    /// Closed set, in tie-break order.
    pub const ALL: [DetectorKind; 3] = [DetectorKind::Sr, DetectorKind::Hbos, DetectorKind::Shesd];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Sr => "sr",
            DetectorKind::Hbos => "hbos",
            DetectorKind::Shesd => "shesd",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Parameter used when nothing better is known.
    pub fn default_param(self) -> f64 {
        match self {
            DetectorKind::Sr => 2.0,
            DetectorKind::Hbos => 0.99,
            DetectorKind::Shesd => 0.01,
        }
    }

    pub fn is_legal(self, value: f64) -> bool {
        match self {
            DetectorKind::Sr => value > 0.0,
            DetectorKind::Hbos => value > 0.0 && value <= 1.0,
            DetectorKind::Shesd => (0.0..=0.49).contains(&value),
        }
    }

    /// Clamps an estimated parameter into the span of the candidate grid.
    pub fn clamp_to_grid(self, value: f64) -> f64 {
        let grid = param_grid(self);
        let (lo, hi) = (grid[0], grid[grid.len() - 1]);
        if value.is_nan() {
            return self.default_param();
        }
        value.clamp(lo, hi)
    }

    pub fn min_len(self) -> usize {
        match self {
            DetectorKind::Sr => SrConfig::default().filter_width.max(2),
            DetectorKind::Hbos => HBOS_MIN_LEN,
            DetectorKind::Shesd => SHESD_MIN_LEN,
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sr" => Ok(DetectorKind::Sr),
            "hbos" => Ok(DetectorKind::Hbos),
            "shesd" | "s-h-esd" => Ok(DetectorKind::Shesd),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

/// Candidate parameter values searched when building training labels.
pub fn param_grid(kind: DetectorKind) -> &'static [f64] {
    match kind {
        DetectorKind::Sr => &SR_GRID,
        DetectorKind::Hbos => &HBOS_GRID,
        DetectorKind::Shesd => &SHESD_GRID,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub kind: DetectorKind,
    pub value: f64,
}

impl DetectorParams {
    pub fn new(kind: DetectorKind, value: f64) -> Result<Self> {
        if !kind.is_legal(value) {
            return Err(Error::ParamOutOfRange {
                kind: kind.as_str(),
                value,
            });
        }
        Ok(Self { kind, value })
    }

    pub fn default_for(kind: DetectorKind) -> Self {
        Self {
            kind,
            value: kind.default_param(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutput {
    pub labels: Vec<bool>,
    /// Higher is more anomalous; the scale depends on the detector.
    pub scores: Vec<f64>,
}

impl DetectionOutput {
    pub fn anomaly_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

pub fn detect(series: &TimeSeries, params: &DetectorParams) -> Result<DetectionOutput> {
    if !params.kind.is_legal(params.value) {
        return Err(Error::ParamOutOfRange {
            kind: params.kind.as_str(),
            value: params.value,
        });
    }
    match params.kind {
        DetectorKind::Sr => sr_detect(series.values(), params.value),
        DetectorKind::Hbos => hbos_detect(series.values(), params.value, &HbosConfig::default()),
        DetectorKind::Shesd => shesd_detect(series, params.value),
    }
}

/// Runs one detector for every value in `grid`, sharing the expensive
/// scoring pass. Outputs are in grid order.
pub fn detect_grid(
    series: &TimeSeries,
    kind: DetectorKind,
    grid: &[f64],
) -> Result<Vec<DetectionOutput>> {
    for &value in grid {
        DetectorParams::new(kind, value)?;
    }
    check_len(kind, series.len())?;
    match kind {
        DetectorKind::Sr => {
            let scores = transforms::sr_saliency(series.values(), &SrConfig::default())?.scores;
            Ok(grid
                .iter()
                .map(|&tau| DetectionOutput {
                    labels: scores.iter().map(|&s| s > tau).collect(),
                    scores: scores.clone(),
                })
                .collect())
        }
        DetectorKind::Hbos => {
            let scores = hbos_scores(series.values(), &HbosConfig::default());
            let probs = rank_probabilities(&scores);
            Ok(grid
                .iter()
                .map(|&theta| DetectionOutput {
                    labels: probs.iter().map(|&p| p > theta).collect(),
                    scores: scores.clone(),
                })
                .collect())
        }
        DetectorKind::Shesd => {
            let n = series.len();
            let max_k = grid.iter().map(|&r| esd_budget(r, n)).max().unwrap_or(0);
            let run = ShesdRun::new(series, max_k)?;
            Ok(grid
                .iter()
                .map(|&r| DetectionOutput {
                    labels: run.labels(esd_budget(r, n)),
                    scores: run.scores.clone(),
                })
                .collect())
        }
    }
}

fn check_len(kind: DetectorKind, len: usize) -> Result<()> {
    if len < kind.min_len() {
        return Err(Error::TooShort {
            needed: kind.min_len(),
            got: len,
        });
    }
    Ok(())
}

/// Flags points whose Spectral Residual score exceeds `tau`.
pub fn sr_detect(v: &[f64], tau: f64) -> Result<DetectionOutput> {
    if !DetectorKind::Sr.is_legal(tau) {
        return Err(Error::ParamOutOfRange {
            kind: "sr",
            value: tau,
        });
    }
    check_len(DetectorKind::Sr, v.len())?;
    let scores = transforms::sr_saliency(v, &SrConfig::default())?.scores;
    let labels = scores.iter().map(|&s| s > tau).collect();
    Ok(DetectionOutput { labels, scores })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HbosConfig {
    /// Include the first difference (0 prepended) as a second histogram.
    pub use_diff: bool,
}

impl Default for HbosConfig {
    fn default() -> Self {
        Self { use_diff: true }
    }
}

/// Histogram outlier score per point: the sum over per-point features of
/// `ln(max_bin_height / own_bin_height)` on `ceil(sqrt(n))` equal-width bins.
pub fn hbos_scores(v: &[f64], cfg: &HbosConfig) -> Vec<f64> {
    let n = v.len();
    let bins = (n as f64).sqrt().ceil().max(1.0) as usize;
    let mut scores = vec![0.0; n];
    let mut add_feature = |feature: &[f64]| {
        let min = feature.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = feature.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let width = max - min;
        let bin_of = |x: f64| -> usize {
            if width > 0.0 {
                (((x - min) / width * bins as f64) as usize).min(bins - 1)
            } else {
                0
            }
        };
        let mut counts = vec![0usize; bins];
        for &x in feature {
            counts[bin_of(x)] += 1;
        }
        let tallest = *counts.iter().max().unwrap_or(&1) as f64;
        for (score, &x) in scores.iter_mut().zip(feature) {
            let height = (counts[bin_of(x)] as f64).max(0.5);
            *score += (tallest / height).ln();
        }
    };
    add_feature(v);
    if cfg.use_diff {
        let diff: Vec<f64> = std::iter::once(0.0)
            .chain(v.windows(2).map(|p| p[1] - p[0]))
            .collect();
        add_feature(&diff);
    }
    scores
}

/// `rank / n` with 1-based ascending ranks; ties share their average rank.
pub fn rank_probabilities(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut probs = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            probs[idx] = avg_rank / n as f64;
        }
        i = j + 1;
    }
    probs
}

/// Flags points whose rank-calibrated HBOS probability exceeds `theta`.
pub fn hbos_detect(v: &[f64], theta: f64, cfg: &HbosConfig) -> Result<DetectionOutput> {
    if !DetectorKind::Hbos.is_legal(theta) {
        return Err(Error::ParamOutOfRange {
            kind: "hbos",
            value: theta,
        });
    }
    check_len(DetectorKind::Hbos, v.len())?;
    let scores = hbos_scores(v, cfg);
    let labels = rank_probabilities(&scores)
        .iter()
        .map(|&p| p > theta)
        .collect();
    Ok(DetectionOutput { labels, scores })
}

fn esd_budget(ratio: f64, n: usize) -> usize {
    (ratio * n as f64).floor() as usize
}

/// Generalized ESD critical value for the `i`-th (1-based) removal.
fn esd_critical(n: usize, i: usize, alpha: f64) -> Option<f64> {
    let df = n as f64 - i as f64 - 1.0;
    if df < 1.0 {
        return None;
    }
    let p = 1.0 - alpha / (2.0 * (n - i + 1) as f64);
    let t = StudentsT::new(0.0, 1.0, df).ok()?.inverse_cdf(p);
    let lambda = (n - i) as f64 * t / ((df + t * t) * (n - i + 1) as f64).sqrt();
    Some(lambda)
}

/// One pass of median/MAD generalized ESD on the decomposition residual,
/// recording removal order so any smaller budget can be read off.
struct ShesdRun {
    /// Removed indices in removal order.
    order: Vec<usize>,
    /// Whether the statistic of each removal exceeded its critical value.
    passed: Vec<bool>,
    scores: Vec<f64>,
}

impl ShesdRun {
    fn new(series: &TimeSeries, max_k: usize) -> Result<Self> {
        let residual = transforms::decompose(series)?.residual;
        let n = residual.len();

        let med = stats::median(&residual);
        let spread = MAD_SCALE * stats::mad(&residual);
        let scores = residual
            .iter()
            .map(|x| (x - med).abs() / spread.max(EPS))
            .collect();

        let mut remaining: Vec<usize> = (0..n).collect();
        let mut order = Vec::with_capacity(max_k);
        let mut passed = Vec::with_capacity(max_k);
        for i in 1..=max_k {
            let Some(lambda) = esd_critical(n, i, ESD_ALPHA) else {
                break;
            };
            let values: Vec<f64> = remaining.iter().map(|&j| residual[j]).collect();
            let med = stats::median(&values);
            let spread = MAD_SCALE * stats::mad(&values);
            let (pos, dev) = remaining
                .iter()
                .enumerate()
                .map(|(pos, &j)| (pos, (residual[j] - med).abs()))
                .fold(
                    (0, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
            let stat = if spread > 0.0 {
                dev / spread
            } else if dev > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            order.push(remaining.remove(pos));
            passed.push(stat > lambda);
        }
        Ok(Self {
            order,
            passed,
            scores,
        })
    }

    fn labels(&self, k: usize) -> Vec<bool> {
        let mut labels = vec![false; self.scores.len()];
        let k = k.min(self.order.len());
        if let Some(count) = (0..k).rev().find(|&i| self.passed[i]).map(|i| i + 1) {
            for &j in &self.order[..count] {
                labels[j] = true;
            }
        }
        labels
    }
}

/// Seasonal-hybrid ESD with at most `floor(ratio * n)` anomalies.
pub fn shesd_detect(series: &TimeSeries, ratio: f64) -> Result<DetectionOutput> {
    if !DetectorKind::Shesd.is_legal(ratio) {
        return Err(Error::ParamOutOfRange {
            kind: "shesd",
            value: ratio,
        });
    }
    check_len(DetectorKind::Shesd, series.len())?;
    let k = esd_budget(ratio, series.len());
    let run = ShesdRun::new(series, k)?;
    Ok(DetectionOutput {
        labels: run.labels(k),
        scores: run.scores,
    })
}
