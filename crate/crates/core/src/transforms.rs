//! Signal transformations: FFT amplitude, Spectral Residual saliency, period
//! detection and robust trend/seasonal/residual decomposition.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{TimeSeries, DEFAULT_WINDOW};
use crate::stats;

pub const EPS: f64 = 1e-8;

/// Minimum autocorrelation for a lag to count as a period.
pub const DEFAULT_ACF_THRESHOLD: f64 = 0.5;

const SECONDS_PER_DAY: i64 = 86_400;
const SECONDS_PER_WEEK: i64 = 7 * SECONDS_PER_DAY;

/// Trend, seasonal and residual components of a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub residual: Vec<f64>,
    pub period: Option<usize>,
}

/// Non-negative per-point Spectral Residual scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrConfig {
    /// Width of the log-amplitude moving average, also the length of the
    /// preceding-saliency window used for score normalisation.
    pub filter_width: usize,
    /// Number of extrapolated points appended before the transform.
    pub extension: usize,
    /// Points used to estimate the extrapolation gradient.
    pub lookback: usize,
}

impl Default for SrConfig {
    fn default() -> Self {
        Self {
            filter_width: 3,
            extension: 5,
            lookback: 5,
        }
    }
}

fn forward_fft(v: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = v.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new()
        .plan_fft_forward(buf.len())
        .process(&mut buf);
    buf
}

/// Magnitude of the unnormalised forward DFT, full spectrum.
pub fn fft_amplitude(v: &[f64]) -> Result<Vec<f64>> {
    if v.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: v.len(),
        });
    }
    Ok(forward_fft(v).iter().map(|c| c.norm()).collect())
}

/// Gradient-based extrapolation of the next point from the last `lookback`.
fn extrapolate_next(v: &[f64], lookback: usize) -> f64 {
    let n = v.len();
    let m = lookback.min(n - 1);
    if m == 0 {
        return v[n - 1];
    }
    let last = v[n - 1];
    let grad = (1..=m)
        .map(|i| (last - v[n - 1 - i]) / i as f64)
        .sum::<f64>()
        / m as f64;
    v[n - m] + grad * m as f64
}

/// Mean of `v[max(0, i-w+1)..=i]` for each `i`.
fn trailing_mean(v: &[f64], w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    let mut sum = 0.0;
    for i in 0..v.len() {
        sum += v[i];
        if i >= w {
            sum -= v[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

/// Spectral Residual saliency scores of `v`.
pub fn sr_saliency(v: &[f64], cfg: &SrConfig) -> Result<SaliencyMap> {
    let q = cfg.filter_width.max(1);
    if v.len() < q.max(2) {
        return Err(Error::TooShort {
            needed: q.max(2),
            got: v.len(),
        });
    }
    let n = v.len();
    let mut extended = v.to_vec();
    let next = extrapolate_next(v, cfg.lookback);
    extended.extend(std::iter::repeat_n(next, cfg.extension));
    let total = extended.len();

    let spectrum = forward_fft(&extended);
    let amplitude: Vec<f64> = spectrum.iter().map(|c| c.norm()).collect();
    let peak = amplitude.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(SaliencyMap {
            scores: vec![0.0; n],
        });
    }
    // Bins below EPS relative to the peak are numerically empty.
    let floor = EPS * peak;
    let log_amp: Vec<f64> = amplitude.iter().map(|&a| a.max(floor).ln()).collect();
    let smoothed = trailing_mean(&log_amp, q);

    let mut residual_spectrum: Vec<Complex<f64>> = spectrum
        .iter()
        .zip(&amplitude)
        .zip(log_amp.iter().zip(&smoothed))
        .map(|((c, &a), (l, s))| {
            if a <= floor {
                Complex::new(0.0, 0.0)
            } else {
                c / a * (l - s).exp()
            }
        })
        .collect();
    FftPlanner::new()
        .plan_fft_inverse(total)
        .process(&mut residual_spectrum);
    let saliency: Vec<f64> = residual_spectrum[..n]
        .iter()
        .map(|c| c.norm() / total as f64)
        .collect();

    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(q);
        if lo == i {
            scores.push(0.0);
            continue;
        }
        let local = stats::mean(&saliency[lo..i]);
        let score = (saliency[i] - local) / local.max(EPS);
        scores.push(score.max(0.0));
    }
    Ok(SaliencyMap { scores })
}

/// Calendar periods (day, week) expressed in points for a sampling step.
pub fn calendar_periods(granularity: i64) -> Vec<usize> {
    if granularity <= 0 {
        return Vec::new();
    }
    [SECONDS_PER_DAY, SECONDS_PER_WEEK]
        .iter()
        .filter(|&&span| span % granularity == 0)
        .map(|&span| (span / granularity) as usize)
        .collect()
}

/// Dominant period of a series, checking calendar periods first.
pub fn detect_period(series: &TimeSeries) -> Option<usize> {
    detect_period_values(
        series.values(),
        &calendar_periods(series.granularity()),
        DEFAULT_ACF_THRESHOLD,
    )
}

/// Period detection on raw values after removing the linear trend.
///
/// A lag qualifies when its autocorrelation reaches `threshold`; outside the
/// calendar candidates it must also be a local maximum of the ACF.
pub fn detect_period_values(v: &[f64], calendar: &[usize], threshold: f64) -> Option<usize> {
    let n = v.len();
    if n < 4 {
        return None;
    }
    let detrended = stats::detrend_linear(v);
    if stats::is_degenerate(&detrended) {
        return None;
    }
    let max_lag = n / 2;
    let acf: Vec<f64> = (0..=max_lag + 1)
        .map(|lag| stats::autocorrelation(&detrended, lag))
        .collect();

    for &p in calendar {
        if (2..=max_lag).contains(&p) && acf[p] >= threshold {
            return Some(p);
        }
    }

    let mut best: Option<(usize, f64)> = None;
    for p in 2..=max_lag {
        let is_peak = acf[p] > acf[p - 1] && (p == max_lag || acf[p] >= acf[p + 1]);
        if is_peak && acf[p] >= threshold && best.is_none_or(|(_, a)| acf[p] > a) {
            best = Some((p, acf[p]));
        }
    }
    best.map(|(p, _)| p)
}

/// Median-based decomposition using the detected period of `series`.
pub fn decompose(series: &TimeSeries) -> Result<Decomposition> {
    decompose_values(series.values(), detect_period(series), DEFAULT_WINDOW)
}

/// Robust decomposition with an explicit period.
///
/// The trend is a centred moving median. With a period, its window spans one
/// full period (rounded up to odd) and is shifted inward at the edges so
/// every median covers a whole cycle; without one, the window is
/// `min(omega, n/4)` and shrinks symmetrically at the edges. The seasonal
/// component is the mean-centred per-phase median of the detrended values,
/// and with a period the trend is re-fitted once on the deseasonalised
/// values before the seasonal component is recomputed.
pub fn decompose_values(v: &[f64], period: Option<usize>, omega: usize) -> Result<Decomposition> {
    let n = v.len();
    if n < 4 {
        return Err(Error::TooShort { needed: 4, got: n });
    }
    let period = period.filter(|&p| p >= 2 && p <= n / 2);
    let (trend, seasonal) = match period {
        Some(p) => {
            // Second pass re-estimates the trend on the deseasonalised values,
            // where a moving median is far less noisy than on the raw cycle.
            let first = shifted_moving_median(v, p | 1);
            let seasonal = phase_medians(v, &first, p);
            let deseasonalised: Vec<f64> = v.iter().zip(&seasonal).map(|(a, b)| a - b).collect();
            let trend = shifted_moving_median(&deseasonalised, p | 1);
            let seasonal = phase_medians(v, &trend, p);
            (trend, seasonal)
        }
        None => (
            symmetric_moving_median(v, omega.min(n / 4).max(1) | 1),
            vec![0.0; n],
        ),
    };

    let residual = v
        .iter()
        .zip(trend.iter().zip(&seasonal))
        .map(|(x, (g, s))| x - g - s)
        .collect();
    Ok(Decomposition {
        trend,
        seasonal,
        residual,
        period,
    })
}

/// Mean-centred per-phase medians of `v - trend`, tiled to the input length.
fn phase_medians(v: &[f64], trend: &[f64], p: usize) -> Vec<f64> {
    let detrended: Vec<f64> = v.iter().zip(trend).map(|(a, b)| a - b).collect();
    let mut phases: Vec<f64> = (0..p)
        .map(|phase| {
            let members: Vec<f64> = detrended.iter().skip(phase).step_by(p).copied().collect();
            stats::median(&members)
        })
        .collect();
    let centre = stats::mean(&phases);
    phases.iter_mut().for_each(|x| *x -= centre);
    (0..v.len()).map(|i| phases[i % p]).collect()
}

fn shifted_moving_median(v: &[f64], width: usize) -> Vec<f64> {
    let n = v.len();
    let width = width.min(n);
    let half = width / 2;
    (0..n)
        .map(|i| {
            let start = i.saturating_sub(half).min(n - width);
            stats::median(&v[start..start + width])
        })
        .collect()
}

fn symmetric_moving_median(v: &[f64], width: usize) -> Vec<f64> {
    let n = v.len();
    let half = width / 2;
    (0..n)
        .map(|i| {
            let reach = half.min(i).min(n - 1 - i);
            stats::median(&v[i - reach..=i + reach])
        })
        .collect()
}
