//! Estimators with uncertainty, bootstrap resampling, Kolmogorov–Smirnov
//! tests and power-law regression.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::numeric::{compensated_sum, mean, sample_covariance, sample_variance};
use crate::rng::{aux, Purpose, RngKey};

pub const BOOTSTRAP_RESAMPLES: usize = 2000;
/// Two-sided coverage of the bootstrap percentile interval.
pub const CI_LEVEL: f64 = 0.99;

/// Monte Carlo scalar with its uncertainty. `stderr` is NaN when it is
/// undefined (a single sample).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    #[serde(deserialize_with = "crate::report::nullable")]
    pub mean: f64,
    #[serde(deserialize_with = "crate::report::nullable")]
    pub stderr: f64,
    #[serde(deserialize_with = "crate::report::nullable")]
    pub ci_low: f64,
    #[serde(deserialize_with = "crate::report::nullable")]
    pub ci_high: f64,
    pub n: usize,
}

impl Estimate {
    /// A value known without error.
    pub fn exact(value: f64) -> Self {
        Self { mean: value, stderr: 0.0, ci_low: value, ci_high: value, n: 1 }
    }

    pub fn has_stderr(&self) -> bool {
        self.stderr.is_finite()
    }

    fn from_replicates(point: f64, stderr: f64, reps: &mut [f64], n: usize) -> Self {
        reps.sort_by(f64::total_cmp);
        let tail = 0.5 * (1.0 - CI_LEVEL);
        let lo = quantile_sorted(reps, tail);
        let hi = quantile_sorted(reps, 1.0 - tail);
        Self { mean: point, stderr, ci_low: lo.min(point), ci_high: hi.max(point), n }
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// Bootstrap replicates of `stat` over index resamples of `0..n`.
pub fn bootstrap<F>(n: usize, key: RngKey, resamples: usize, stat: F) -> Vec<f64>
where
    F: Fn(&[usize]) -> f64,
{
    bootstrap_map(n, key, resamples, stat)
}

fn bootstrap_map<T, F>(n: usize, key: RngKey, resamples: usize, stat: F) -> Vec<T>
where
    F: Fn(&[usize]) -> T,
{
    let mut stream = key.with_purpose(Purpose::Auxiliary).normals(aux::BOOTSTRAP);
    let mut idx = vec![0usize; n];
    (0..resamples)
        .map(|_| {
            for i in idx.iter_mut() {
                *i = stream.next_index(n);
            }
            stat(&idx)
        })
        .collect()
}

fn std_dev(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

/// Point value `stat(0..n)` with bootstrap standard error and percentile CI.
pub fn bootstrap_estimate<F>(n: usize, key: RngKey, stat: F) -> Estimate
where
    F: Fn(&[usize]) -> f64,
{
    let all: Vec<usize> = (0..n).collect();
    let point = stat(&all);
    if n < 2 {
        return Estimate { mean: point, stderr: f64::NAN, ci_low: point, ci_high: point, n };
    }
    let mut reps = bootstrap(n, key, BOOTSTRAP_RESAMPLES, stat);
    let se = std_dev(&reps);
    Estimate::from_replicates(point, se, &mut reps, n)
}

/// Two statistics of the same replicas and their difference, resampled
/// jointly so the difference keeps the benefit of common random numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedEstimate {
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub diff: Estimate,
}

pub fn paired_estimate<F, G>(n: usize, key: RngKey, lhs: F, rhs: G) -> PairedEstimate
where
    F: Fn(&[usize]) -> f64,
    G: Fn(&[usize]) -> f64,
{
    let all: Vec<usize> = (0..n).collect();
    let (l, r) = (lhs(&all), rhs(&all));
    if n < 2 {
        let single = |v: f64| Estimate { mean: v, stderr: f64::NAN, ci_low: v, ci_high: v, n };
        return PairedEstimate { lhs: single(l), rhs: single(r), diff: single(l - r) };
    }
    let reps = bootstrap_map(n, key, BOOTSTRAP_RESAMPLES, |idx| (lhs(idx), rhs(idx)));
    let mut ls: Vec<f64> = reps.iter().map(|p| p.0).collect();
    let mut rs: Vec<f64> = reps.iter().map(|p| p.1).collect();
    let mut ds: Vec<f64> = reps.iter().map(|p| p.0 - p.1).collect();
    let (sl, sr, sd) = (std_dev(&ls), std_dev(&rs), std_dev(&ds));
    PairedEstimate {
        lhs: Estimate::from_replicates(l, sl, &mut ls, n),
        rhs: Estimate::from_replicates(r, sr, &mut rs, n),
        diff: Estimate::from_replicates(l - r, sd, &mut ds, n),
    }
}

/// Sample mean, `s / sqrt(n)` standard error and a bootstrap CI.
pub fn estimate(samples: &[f64], key: RngKey) -> Estimate {
    let n = samples.len();
    let m = mean(samples);
    if n < 2 {
        return Estimate { mean: m, stderr: f64::NAN, ci_low: m, ci_high: m, n };
    }
    let se = (sample_variance(samples) / n as f64).sqrt();
    let mut reps = bootstrap(n, key, BOOTSTRAP_RESAMPLES, |idx| mean_at(samples, idx));
    Estimate::from_replicates(m, se, &mut reps, n)
}

/// Unbiased sample variance with bootstrap standard error and CI.
pub fn variance_estimate(samples: &[f64], key: RngKey) -> Estimate {
    bootstrap_estimate(samples.len(), key, |idx| variance_at(samples, idx))
}

/// Gaussian-theory standard error of a sample variance, `s^2 sqrt(2/(n-1))`.
pub fn chi2_variance_stderr(variance: f64, n: usize) -> f64 {
    variance * (2.0 / (n as f64 - 1.0)).sqrt()
}

pub fn mean_at(xs: &[f64], idx: &[usize]) -> f64 {
    compensated_sum(idx.iter().map(|&i| xs[i])) / idx.len() as f64
}

pub fn variance_at(xs: &[f64], idx: &[usize]) -> f64 {
    let picked: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
    sample_variance(&picked)
}

pub fn covariance_at(xs: &[f64], ys: &[f64], idx: &[usize]) -> f64 {
    let a: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
    let b: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
    sample_covariance(&a, &b)
}

pub fn fraction_at(flags: &[bool], idx: &[usize]) -> f64 {
    idx.iter().filter(|&&i| flags[i]).count() as f64 / idx.len() as f64
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let pi2 = std::f64::consts::PI.powi(2);
        let y = (-pi2 / (8.0 * lambda * lambda)).exp();
        let mut s = 0.0;
        let mut k = 1.0f64;
        loop {
            let term = y.powf(k * k);
            s += term;
            if term < 1e-18 {
                break;
            }
            k += 2.0;
        }
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let x = (-2.0 * lambda * lambda).exp();
        let mut s = 0.0;
        let mut sign = 1.0;
        for k in 1..=100 {
            let term = x.powi(k * k);
            s += sign * term;
            if term < 1e-18 {
                break;
            }
            sign = -sign;
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

fn ks_p_value(d: f64, effective_n: f64) -> f64 {
    let root = effective_n.sqrt();
    kolmogorov_survival((root + 0.12 + 0.11 / root) * d)
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    (d, ks_p_value(d, na * nb / (na + nb)))
}

/// One-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    (d, ks_p_value(d, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub t: f64,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: Vec<FitPoint>,
}

/// Weighted least squares of `log value` on `log t`, weights `(value /
/// stderr)^2`; unit weights when any stderr is zero or undefined.
pub fn fit_exponent(points: &[(f64, Estimate)]) -> Result<ExponentFit> {
    if points.len() < 3 {
        return Err(SimError::Stats(format!("need at least 3 points, got {}", points.len())));
    }
    if let Some((t, _)) = points.iter().find(|(t, _)| *t < 1.0) {
        return Err(SimError::Stats(format!("exponent fit requires t >= 1, got {t}")));
    }
    if let Some((t, e)) = points.iter().find(|(_, e)| !(e.mean > 0.0)) {
        return Err(SimError::Stats(format!("non-positive value {} at t = {t}", e.mean)));
    }
    let weighted = points.iter().all(|(_, e)| e.stderr.is_finite() && e.stderr > 0.0);
    let xs: Vec<f64> = points.iter().map(|(t, _)| t.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, e)| e.mean.ln()).collect();
    let ws: Vec<f64> = points
        .iter()
        .map(|(_, e)| if weighted { (e.mean / e.stderr).powi(2) } else { 1.0 })
        .collect();
    let sw: f64 = ws.iter().sum();
    let mx = xs.iter().zip(&ws).map(|(x, w)| w * x).sum::<f64>() / sw;
    let my = ys.iter().zip(&ws).map(|(y, w)| w * y).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(&ws).map(|(x, w)| w * (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).zip(&ws).map(|((x, y), w)| w * (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().zip(&ws).map(|(y, w)| w * (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .zip(&ws)
        .map(|((x, y), w)| w * (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { (1.0 - rss / syy).clamp(0.0, 1.0) } else { 1.0 };
    let slope_stderr = if weighted {
        (1.0 / sxx).sqrt()
    } else {
        (rss / (points.len() as f64 - 2.0) / sxx).sqrt()
    };
    Ok(ExponentFit {
        slope,
        slope_stderr,
        intercept,
        r_squared,
        points: points
            .iter()
            .map(|(t, e)| FitPoint { t: *t, value: e.mean, stderr: e.stderr })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_key;

    fn gaussian(seed: u64, n: usize, mu: f64, sd: f64) -> Vec<f64> {
        let mut s = make_key(seed, 0, Purpose::Auxiliary).normals(0);
        (0..n).map(|_| mu + sd * s.next_normal()).collect()
    }

    #[test]
    fn constant_samples_have_degenerate_ci() {
        let e = estimate(&[2.5; 40], make_key(1, 0, Purpose::Auxiliary));
        assert_eq!((e.mean, e.stderr, e.ci_low, e.ci_high), (2.5, 0.0, 2.5, 2.5));
        let v = variance_estimate(&[3.0, 3.0], make_key(1, 0, Purpose::Auxiliary));
        assert_eq!(v.mean, 0.0);
    }

    #[test]
    fn single_sample_flags_undefined_stderr() {
        let e = estimate(&[1.0], make_key(1, 0, Purpose::Auxiliary));
        assert!(!e.has_stderr());
        assert_eq!(e.n, 1);
    }

    #[test]
    fn gaussian_mean_and_variance() {
        let xs = gaussian(3, 10_000, 0.0, 1.0);
        let e = estimate(&xs, make_key(3, 1, Purpose::Auxiliary));
        assert!(e.mean.abs() < 0.03);
        assert!(e.ci_low <= e.mean && e.mean <= e.ci_high);
        let ys = gaussian(4, 10_000, 0.0, 2.0);
        let v = variance_estimate(&ys, make_key(4, 1, Purpose::Auxiliary));
        assert!(v.ci_low <= 4.0 && 4.0 <= v.ci_high, "{v:?}");
    }

    #[test]
    fn bootstrap_stderr_matches_chi2_theory() {
        let xs = gaussian(5, 4000, 1.0, 1.5);
        let v = variance_estimate(&xs, make_key(5, 1, Purpose::Auxiliary));
        let theory = chi2_variance_stderr(v.mean, xs.len());
        assert!((v.stderr / theory - 1.0).abs() < 0.2, "{} vs {theory}", v.stderr);
    }

    #[test]
    fn identical_samples_have_zero_ks() {
        let xs = gaussian(6, 500, 0.0, 1.0);
        let (d, p) = ks_two_sample(&xs, &xs);
        assert_eq!(d, 0.0);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn shifted_normals_are_rejected() {
        let (_, p) = ks_two_sample(&gaussian(7, 10_000, 0.0, 1.0), &gaussian(8, 10_000, 1.0, 1.0));
        assert!(p < 1e-6);
    }

    #[test]
    fn kolmogorov_branches_agree_at_switch() {
        let a = kolmogorov_survival(1.18 - 1e-9);
        let b = kolmogorov_survival(1.18 + 1e-9);
        assert!((a - b).abs() < 1e-8);
        // Known quantiles of the Kolmogorov distribution.
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn exponent_fit_is_exact_on_power_laws() {
        let ts = [1.0, 2.0, 4.0, 8.0];
        let pts: Vec<(f64, Estimate)> =
            ts.iter().map(|&t| (t, Estimate::exact(f64::powf(t, 2.0 / 3.0)))).collect();
        let fit = fit_exponent(&pts).unwrap();
        assert!((fit.slope - 2.0 / 3.0).abs() < 1e-9);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        let linear: Vec<(f64, Estimate)> = ts.iter().map(|&t| (t, Estimate::exact(3.0 * t))).collect();
        assert!((fit_exponent(&linear).unwrap().slope - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exponent_fit_rejects_bad_input() {
        let two = [(1.0, Estimate::exact(1.0)), (2.0, Estimate::exact(2.0))];
        assert!(fit_exponent(&two).is_err());
        let early = [(0.5, Estimate::exact(1.0)), (2.0, Estimate::exact(2.0)), (4.0, Estimate::exact(3.0))];
        assert!(fit_exponent(&early).is_err());
    }

    #[test]
    fn paired_difference_cancels_shared_noise() {
        let a = gaussian(11, 2000, 0.0, 1.0);
        let b: Vec<f64> = a.iter().zip(gaussian(12, 2000, 0.0, 0.1)).map(|(x, e)| x + e).collect();
        let p = paired_estimate(a.len(), make_key(3, 0, Purpose::Auxiliary), |i| mean_at(&a, i), |i| mean_at(&b, i));
        assert!((p.diff.mean - (p.lhs.mean - p.rhs.mean)).abs() < 1e-15);
        assert!(p.diff.stderr < 0.2 * p.lhs.stderr, "{p:?}");
        assert!((p.lhs.stderr - 1.0 / 2000f64.sqrt()).abs() < 0.2 / 2000f64.sqrt());
    }
}
