//! Small descriptive-statistics helpers. Degenerate inputs yield 0.

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population variance, two-pass.
pub(crate) fn variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

pub(crate) fn std_dev(v: &[f64]) -> f64 {
    variance(v).sqrt()
}

pub(crate) fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    median_sorted(&sorted)
}

pub(crate) fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Unscaled median absolute deviation around the median.
pub(crate) fn mad(v: &[f64]) -> f64 {
    let m = median(v);
    let dev: Vec<f64> = v.iter().map(|x| (x - m).abs()).collect();
    median(&dev)
}

/// Variance that treats relative round-off as zero.
pub(crate) fn is_degenerate(v: &[f64]) -> bool {
    let var = variance(v);
    let m = mean(v);
    var <= 1e-24 * (1.0 + m * m)
}

pub(crate) fn skewness(v: &[f64]) -> f64 {
    if is_degenerate(v) {
        return 0.0;
    }
    let m = mean(v);
    let sd = std_dev(v);
    v.iter().map(|x| ((x - m) / sd).powi(3)).sum::<f64>() / v.len() as f64
}

/// Excess kurtosis.
pub(crate) fn kurtosis(v: &[f64]) -> f64 {
    if is_degenerate(v) {
        return 0.0;
    }
    let m = mean(v);
    let sd = std_dev(v);
    v.iter().map(|x| ((x - m) / sd).powi(4)).sum::<f64>() / v.len() as f64 - 3.0
}

/// Biased autocorrelation at `lag`, 0 when undefined.
pub(crate) fn autocorrelation(v: &[f64], lag: usize) -> f64 {
    if lag >= v.len() || is_degenerate(v) {
        return 0.0;
    }
    let m = mean(v);
    let denom: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    let num: f64 = v
        .iter()
        .zip(&v[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum();
    num / denom
}

/// Least-squares slope against the index.
pub(crate) fn slope(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let tm = (n as f64 - 1.0) / 2.0;
    let vm = mean(v);
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, x) in v.iter().enumerate() {
        let dt = i as f64 - tm;
        num += dt * (x - vm);
        den += dt * dt;
    }
    num / den
}

/// Removes the least-squares line.
pub(crate) fn detrend_linear(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let b = slope(v);
    let tm = (n as f64 - 1.0) / 2.0;
    let vm = mean(v);
    v.iter()
        .enumerate()
        .map(|(i, x)| x - (vm + b * (i as f64 - tm)))
        .collect()
}
