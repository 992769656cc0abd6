//! Sensitivity tuning of a preliminary detection result.
//!
//! A point stays anomalous only if its decomposition residual exceeds a
//! tolerance `delta = factor(alpha) * mu`, where `mu` mixes the local and the
//! average trend magnitude. Larger `alpha` shrinks the tolerance, so more
//! anomalies survive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TimeSeries;
use crate::transforms::{self, Decomposition};

pub const DEFAULT_ALPHA: f64 = 50.0;
pub const ALPHA_MIN: f64 = 0.0;
pub const ALPHA_MAX: f64 = 100.0;

/// `factor(alpha) = base ^ ((anchor - alpha) / scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorCurve {
    pub base: f64,
    pub scale: f64,
    pub anchor: f64,
}

impl Default for FactorCurve {
    fn default() -> Self {
        Self {
            base: 2.0,
            scale: 10.0,
            anchor: 50.0,
        }
    }
}

impl FactorCurve {
    pub fn factor(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        Ok(self.base.powf((self.anchor - alpha) / self.scale))
    }
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if !(ALPHA_MIN..=ALPHA_MAX).contains(&alpha) {
        return Err(Error::OutOfRange {
            value: alpha,
            min: ALPHA_MIN,
            max: ALPHA_MAX,
        });
    }
    Ok(())
}

/// Tolerance multiplier; strictly decreasing, 1 at alpha = 50.
pub fn factor(alpha: f64) -> Result<f64> {
    FactorCurve::default().factor(alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub adjusted_labels: Vec<bool>,
    pub delta: Vec<f64>,
    pub band: Band,
}

/// Per-point tolerance unit: half the local trend magnitude plus half the
/// mean trend magnitude.
fn delta_unit(trend: &[f64]) -> Vec<f64> {
    let avg = trend.iter().map(|g| g.abs()).sum::<f64>() / trend.len() as f64;
    trend.iter().map(|g| 0.5 * g.abs() + 0.5 * avg).collect()
}

fn band_from(d: &Decomposition, delta: &[f64]) -> Band {
    let (lower, upper) = d
        .trend
        .iter()
        .zip(&d.seasonal)
        .zip(delta)
        .map(|((g, s), dl)| (g + s - dl, g + s + dl))
        .unzip();
    Band { lower, upper }
}

/// Tunes `labels` against an existing decomposition of the same series.
pub fn tune_decomposed(
    d: &Decomposition,
    labels: &[bool],
    alpha: f64,
    curve: &FactorCurve,
) -> Result<TuningResult> {
    if labels.len() != d.residual.len() {
        return Err(Error::LengthMismatch {
            left: d.residual.len(),
            right: labels.len(),
        });
    }
    let f = curve.factor(alpha)?;
    let delta: Vec<f64> = delta_unit(&d.trend).iter().map(|mu| f * mu).collect();
    // Suppress when the loss lies within tolerance.
    let adjusted_labels = labels
        .iter()
        .zip(&d.residual)
        .zip(&delta)
        .map(|((&a, e), dl)| a && e.abs() > *dl)
        .collect();
    let band = band_from(d, &delta);
    Ok(TuningResult {
        adjusted_labels,
        delta,
        band,
    })
}

pub fn tune(series: &TimeSeries, labels: &[bool], alpha: f64) -> Result<TuningResult> {
    if labels.len() != series.len() {
        return Err(Error::LengthMismatch {
            left: series.len(),
            right: labels.len(),
        });
    }
    check_alpha(alpha)?;
    let d = transforms::decompose(series)?;
    tune_decomposed(&d, labels, alpha, &FactorCurve::default())
}

/// The tolerance band alone, for display.
pub fn band(series: &TimeSeries, alpha: f64) -> Result<Band> {
    check_alpha(alpha)?;
    let d = transforms::decompose(series)?;
    let f = factor(alpha)?;
    let delta: Vec<f64> = delta_unit(&d.trend).iter().map(|mu| f * mu).collect();
    Ok(band_from(&d, &delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn ts(v: Vec<f64>) -> TimeSeries {
        TimeSeries::from_values(0, 3600, v).unwrap()
    }

    #[test]
    fn factor_anchors() {
        assert_eq!(factor(50.0).unwrap(), 1.0);
        assert_eq!(factor(100.0).unwrap(), 0.03125);
        assert_eq!(factor(0.0).unwrap(), 32.0);
        assert_eq!(factor(0.0).unwrap() / factor(100.0).unwrap(), 1024.0);
        assert!(matches!(factor(100.5), Err(Error::OutOfRange { .. })));
        assert!(factor(-1.0).is_err());
        assert!(factor(f64::NAN).is_err());
    }

    #[test]
    fn factor_strictly_decreasing() {
        let vals: Vec<f64> = (0..=100).map(|a| factor(a as f64).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn no_labels_stay_none() {
        let v: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).sin() * 5.0).collect();
        for alpha in [0.0, 50.0, 100.0] {
            let r = tune(&ts(v.clone()), &[false; 50], alpha).unwrap();
            assert!(r.adjusted_labels.iter().all(|&l| !l));
        }
    }

    #[test]
    fn constant_series_suppressed() {
        let mut labels = vec![false; 40];
        labels[20] = true;
        let r = tune(&ts(vec![10.0; 40]), &labels, 50.0).unwrap();
        assert!(r.delta.iter().all(|&d| d == 10.0));
        assert!(r.adjusted_labels.iter().all(|&l| !l));
        let b = band(&ts(vec![10.0; 40]), 50.0).unwrap();
        assert!(b.lower.iter().all(|&x| x == 0.0));
        assert!(b.upper.iter().all(|&x| x == 20.0));
    }

    #[test]
    fn band_width_ratio() {
        let v: Vec<f64> = (0..120)
            .map(|i| 20.0 + (i as f64 / 3.0).sin() + 0.05 * i as f64)
            .collect();
        let s = ts(v);
        let strict = band(&s, 100.0).unwrap();
        let loose = band(&s, 0.0).unwrap();
        for i in 0..120 {
            let w_strict = strict.upper[i] - strict.lower[i];
            let w_loose = loose.upper[i] - loose.lower[i];
            assert!((w_strict / w_loose - 2f64.powi(-10)).abs() < 1e-12);
        }
        let r0 = tune(&s, &[false; 120], 0.0).unwrap();
        let r100 = tune(&s, &[false; 120], 100.0).unwrap();
        for (a, b) in r100.delta.iter().zip(&r0.delta) {
            assert_eq!(a / b, 2f64.powi(-10));
        }
    }

    #[test]
    fn errors() {
        let s = ts(vec![1.0; 10]);
        assert!(matches!(
            tune(&s, &[true; 9], 50.0),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            tune(&s, &[true; 10], 101.0),
            Err(Error::OutOfRange { .. })
        ));
        assert!(band(&s, -0.1).is_err());
    }

    proptest! {
        #[test]
        fn suppression_only_and_alpha_monotone(
            v in proptest::collection::vec(-100f64..100.0, 8..100),
            mask in proptest::collection::vec(any::<bool>(), 100),
            a1 in 0f64..100.0,
            a2 in 0f64..100.0,
        ) {
            let n = v.len();
            let labels = &mask[..n];
            let s = ts(v);
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let r_lo = tune(&s, labels, lo).unwrap();
            let r_hi = tune(&s, labels, hi).unwrap();
            let d = transforms::decompose(&s).unwrap();
            for i in 0..n {
                prop_assert!(!r_lo.adjusted_labels[i] || labels[i]);
                prop_assert!(!r_lo.adjusted_labels[i] || r_hi.adjusted_labels[i]);
                prop_assert!(r_lo.delta[i] >= 0.0);
                prop_assert!(r_lo.band.lower[i] <= r_lo.band.upper[i]);
                let centre = d.trend[i] + d.seasonal[i];
                prop_assert!(r_lo.band.lower[i] <= centre && centre <= r_lo.band.upper[i]);
                // direct recomputation
                let g = &d.trend;
                let mu = 0.5 * g[i].abs() + 0.5 * g.iter().map(|x| x.abs()).sum::<f64>() / n as f64;
                let expect = labels[i] && d.residual[i].abs() > factor(lo).unwrap() * mu;
                prop_assert_eq!(r_lo.adjusted_labels[i], expect);
            }
        }

        #[test]
        fn scale_equivariant_on_periodic(
            c in 0.1f64..50.0,
            alpha in 0f64..100.0,
            spike in 0usize..96,
        ) {
            let mut v: Vec<f64> = (0..96).map(|t| 10.0 + (2.0 * PI * t as f64 / 12.0).sin()).collect();
            v[spike] += 4.0;
            let labels: Vec<bool> = (0..96).map(|i| i == spike || i % 7 == 0).collect();
            let base = ts(v.clone());
            let scaled = base.scaled(c);
            let a = tune(&base, &labels, alpha).unwrap();
            let b = tune(&scaled, &labels, alpha).unwrap();
            let da = transforms::decompose(&base).unwrap();
            let db = transforms::decompose(&scaled).unwrap();
            prop_assume!(da.period == db.period);
            // only compare points whose decision is not on a knife edge
            for i in 0..96 {
                let margin = (da.residual[i].abs() - a.delta[i]).abs();
                if margin > 1e-9 * a.delta[i].max(1.0) {
                    prop_assert_eq!(a.adjusted_labels[i], b.adjusted_labels[i]);
                }
            }
        }
    }
}
