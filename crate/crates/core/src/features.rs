//! Window featurisation: every transform in [`TRANSFORMS`] is applied to the
//! window, every extractor in [`EXTRACTORS`] to each transformed series, and
//! six whole-window descriptors are appended.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;
use crate::transforms::{self, SrConfig, DEFAULT_ACF_THRESHOLD};

pub const FEATURE_DIM: usize = TRANSFORMS.len() * EXTRACTORS.len() + GLOBAL_FEATURES.len();
pub const SCHEMA_VERSION: u32 = 1;
pub const MIN_WINDOW: usize = 8;

pub const TRANSFORMS: [&str; 4] = ["identity", "sr", "fft", "residual"];

pub const EXTRACTORS: [&str; 19] = [
    "mean",
    "variance",
    "std",
    "skewness",
    "kurtosis",
    "min",
    "max",
    "range",
    "median",
    "mad",
    "delta",
    "acf1",
    "acf2",
    "acf3",
    "mean_crossings",
    "longest_increasing_run",
    "peak_count",
    "binned_entropy",
    "slope",
];

pub const GLOBAL_FEATURES: [&str; 6] = [
    "period",
    "seasonality_strength",
    "trend_strength",
    "normal_ratio_3sigma",
    "cv",
    "signal_to_mad",
];

const ENTROPY_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema_version: u32,
}

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Column names in the order produced by [`extract_features`].
pub fn feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(FEATURE_DIM);
    for t in TRANSFORMS {
        for f in EXTRACTORS {
            names.push(format!("{t}.{f}"));
        }
    }
    for g in GLOBAL_FEATURES {
        names.push(format!("global.{g}"));
    }
    names
}

pub fn extract_features(window: &[f64]) -> Result<FeatureVector> {
    if window.len() < MIN_WINDOW {
        return Err(Error::TooShort {
            needed: MIN_WINDOW,
            got: window.len(),
        });
    }
    let period = transforms::detect_period_values(window, &[], DEFAULT_ACF_THRESHOLD);
    // The spectrum is taken on the centred window; the level is already in
    // identity.mean and would otherwise dominate every spectral statistic.
    let centre = stats::mean(window);
    let centred: Vec<f64> = window.iter().map(|x| x - centre).collect();
    let decomposition = transforms::decompose_values(window, period, window.len())?;

    let transformed = [
        window.to_vec(),
        transforms::sr_saliency(window, &SrConfig::default())?.scores,
        transforms::fft_amplitude(&centred)?,
        decomposition.residual.clone(),
    ];

    let mut values = Vec::with_capacity(FEATURE_DIM);
    for w in &transformed {
        values.extend(series_features(w));
    }
    values.extend(global_features(window, &decomposition));
    for v in values.iter_mut() {
        if !v.is_finite() {
            *v = 0.0;
        }
    }
    debug_assert_eq!(values.len(), FEATURE_DIM);
    Ok(FeatureVector {
        values,
        schema_version: SCHEMA_VERSION,
    })
}

fn series_features(w: &[f64]) -> [f64; 19] {
    let mean = stats::mean(w);
    let var = stats::variance(w);
    let sd = var.sqrt();
    let min = w.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let flat = stats::is_degenerate(w);
    [
        mean,
        if flat { 0.0 } else { var },
        if flat { 0.0 } else { sd },
        stats::skewness(w),
        stats::kurtosis(w),
        min,
        max,
        max - min,
        stats::median(w),
        stats::mad(w),
        w[w.len() - 1] - w[0],
        stats::autocorrelation(w, 1),
        stats::autocorrelation(w, 2),
        stats::autocorrelation(w, 3),
        mean_crossings(w, mean) as f64,
        longest_increasing_run(w) as f64,
        if flat {
            0.0
        } else {
            peak_count(w, mean + sd) as f64
        },
        binned_entropy(w, min, max),
        stats::slope(w),
    ]
}

fn mean_crossings(w: &[f64], mean: f64) -> usize {
    w.windows(2)
        .filter(|p| (p[0] - mean) * (p[1] - mean) < 0.0)
        .count()
}

fn longest_increasing_run(w: &[f64]) -> usize {
    let mut best = 1;
    let mut run = 1;
    for p in w.windows(2) {
        if p[1] > p[0] {
            run += 1;
            best = best.max(run);
        } else {
            run = 1;
        }
    }
    best
}

fn peak_count(w: &[f64], above: f64) -> usize {
    w.windows(3)
        .filter(|p| p[1] > p[0] && p[1] > p[2] && p[1] > above)
        .count()
}

fn binned_entropy(w: &[f64], min: f64, max: f64) -> f64 {
    let range = max - min;
    if range.is_nan() || range <= 0.0 {
        return 0.0;
    }
    let mut counts = [0usize; ENTROPY_BINS];
    for x in w {
        let b = (((x - min) / range) * ENTROPY_BINS as f64) as usize;
        counts[b.min(ENTROPY_BINS - 1)] += 1;
    }
    let n = w.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn strength(component_var: f64, residual_var: f64) -> f64 {
    if component_var <= 0.0 {
        return 0.0;
    }
    (1.0 - residual_var / component_var).clamp(0.0, 1.0)
}

fn global_features(w: &[f64], d: &transforms::Decomposition) -> [f64; 6] {
    let residual_var = stats::variance(&d.residual);
    let plus_residual =
        |c: &[f64]| -> Vec<f64> { c.iter().zip(&d.residual).map(|(a, b)| a + b).collect() };
    let mean = stats::mean(w);
    let sd = stats::std_dev(w);
    let normal = if stats::is_degenerate(w) {
        1.0
    } else {
        w.iter().filter(|x| (*x - mean).abs() <= 3.0 * sd).count() as f64 / w.len() as f64
    };
    let cv = if mean.abs() > f64::EPSILON {
        sd / mean.abs()
    } else {
        0.0
    };
    let median = stats::median(w);
    let mad = stats::mad(w);
    let signal_to_mad = if mad > 0.0 {
        w.iter().map(|x| (x - median).abs()).fold(0.0, f64::max) / mad
    } else {
        0.0
    };
    [
        d.period.unwrap_or(0) as f64,
        strength(stats::variance(&plus_residual(&d.seasonal)), residual_var),
        strength(stats::variance(&plus_residual(&d.trend)), residual_var),
        normal,
        cv,
        signal_to_mad,
    ]
}

/// Writes a feature matrix as CSV with a [`feature_names`] header row.
pub fn write_feature_matrix<W: Write>(out: W, rows: &[FeatureVector]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| Error::Parse(e.to_string());
    writer.write_record(feature_names()).map_err(to_err)?;
    for row in rows {
        writer
            .write_record(row.values.iter().map(|v| v.to_string()))
            .map_err(to_err)?;
    }
    writer.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}
