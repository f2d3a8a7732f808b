//! Small descriptive statistics and bootstrap helpers for experiment reports.

use rand::Rng;

use crate::rng::RngStream;

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn resampled_means(xs: &[f64], rng: &mut RngStream, resamples: usize) -> Vec<f64> {
    let n = xs.len();
    let mut out: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| xs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Percentile bootstrap 95% CI of the mean.
pub fn bootstrap_ci(xs: &[f64], rng: &mut RngStream) -> [f64; 2] {
    if xs.is_empty() {
        return [f64::NAN, f64::NAN];
    }
    let means = resampled_means(xs, rng, BOOTSTRAP_RESAMPLES);
    [
        quantile_sorted(&means, 0.025),
        quantile_sorted(&means, 0.975),
    ]
}

/// One-sided paired bootstrap test of `H1: mean(diffs) > 0`.
///
/// The differences are recentred to zero mean (the null) and resampled; the
/// p-value is the share of resampled means at least as large as the observed
/// one, with the usual +1 correction.
pub fn paired_bootstrap_p(diffs: &[f64], rng: &mut RngStream) -> f64 {
    if diffs.is_empty() {
        return 1.0;
    }
    let observed = mean(diffs);
    let centred: Vec<f64> = diffs.iter().map(|d| d - observed).collect();
    let means = resampled_means(&centred, rng, BOOTSTRAP_RESAMPLES);
    let extreme = means.iter().filter(|&&m| m >= observed).count();
    (extreme + 1) as f64 / (BOOTSTRAP_RESAMPLES + 1) as f64
}

/// Ordinary least-squares slope of `ys` against `0..n`.
pub fn ols_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = mean(ys);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Bootstrap 95% CI of the slope of the across-unit mean series, resampling
/// whole units (rows).
pub fn slope_ci(rows: &[Vec<f64>], rng: &mut RngStream) -> [f64; 2] {
    let n = rows.len();
    if n == 0 {
        return [f64::NAN, f64::NAN];
    }
    let len = rows[0].len();
    let mut slopes: Vec<f64> = (0..BOOTSTRAP_RESAMPLES / 5)
        .map(|_| {
            let mut acc = vec![0.0; len];
            for _ in 0..n {
                let r = &rows[rng.random_range(0..n)];
                for (a, v) in acc.iter_mut().zip(r) {
                    *a += v;
                }
            }
            ols_slope(&acc.iter().map(|a| a / n as f64).collect::<Vec<_>>())
        })
        .collect();
    slopes.sort_by(f64::total_cmp);
    [
        quantile_sorted(&slopes, 0.025),
        quantile_sorted(&slopes, 0.975),
    ]
}

/// Rounds to 6 significant digits.
pub fn sig6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}
