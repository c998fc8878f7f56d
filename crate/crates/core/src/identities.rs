//! Monte Carlo checks of the exact identities linking the height function
//! `h_0(t, 0)` to the endpoint law of the directed polymer.
//!
//! Quantities at the origin come from one reverse (green-row) pass per
//! replica, which yields `h_theta(t, 0)` for every drift and the quenched
//! density at once. Spatial fields such as `H(t, x) = h_0(t, x) - W(x)` need
//! a forward solve. Whenever two sides are functionals of the same replicas
//! they are resampled jointly.

use serde::{Deserialize, Serialize};

use crate::boundary::BoundaryPath;
use crate::ensemble::{EnsembleSpec, RowSampler};
use crate::error::{Result, SimError};
use crate::numeric::CompensatedSum;
use crate::polymer::{
    annealed_density, endpoint_density, quenched_moment, sample_endpoint, tail_fit, AnnealedAccumulator,
    AnnealedDensity, EndpointDensity, TailFit,
};
use crate::report::{default_systematic, CheckMode, ConfigSnapshot, IdentityReport, Origin};
use crate::rng::Purpose;
use crate::she::{duality_check, PropagatorRow};
use crate::stats::{
    bootstrap_estimate, covariance_at, estimate, fit_exponent, ks_two_sample, mean_at, paired_estimate, variance_at,
    variance_estimate, Estimate, ExponentFit,
};

/// Pathwise convexity tolerance for second differences of `theta -> h_theta`.
pub const CONVEXITY_TOLERANCE: f64 = 1e-9;
/// Largest duality residual accepted by the self-test.
pub const DUALITY_TOLERANCE: f64 = 1e-10;

fn snapshot(spec: &EnsembleSpec) -> ConfigSnapshot {
    ConfigSnapshot::from(spec)
}

/// `h_theta(t, 0)` from a green row and the undrifted initial profile.
pub fn drifted_height(row: &PropagatorRow, w: &BoundaryPath, theta: f64) -> f64 {
    if theta == 0.0 {
        return row.log_pairing(&w.values);
    }
    let f: Vec<f64> = w.values.iter().enumerate().map(|(j, v)| v + theta * row.grid.x(j)).collect();
    row.log_pairing(&f)
}

fn column<T>(samples: &[T], f: impl Fn(&T) -> f64) -> Vec<f64> {
    samples.iter().map(f).collect()
}

fn grid_index(spec: &EnsembleSpec, x: f64) -> Result<usize> {
    spec.grid.index_of(x).ok_or_else(|| {
        SimError::OutOfDomain(format!("x = {x} is not a lattice point of [-{0}, {0}]", spec.grid.half_width))
    })
}

/// Per-replica observables at the origin for zero drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OriginSample {
    /// `h_0(t, 0)`.
    pub h: f64,
    /// `int |y| p(t, y) dy`.
    pub abs_mean: f64,
    /// `int y p(t, y) dy`.
    pub mean: f64,
    /// `int y^2 p(t, y) dy`.
    pub second: f64,
}

pub fn origin_samples(spec: &EnsembleSpec) -> Result<Vec<OriginSample>> {
    let sampler = RowSampler::new(spec)?;
    spec.run(|r| {
        let (row, w) = sampler.draw(r)?;
        let p = endpoint_density(&row, &w, 0.0)?;
        Ok(OriginSample {
            h: row.log_pairing(&w.values),
            abs_mean: quenched_moment(&p, 1, true),
            mean: p.mean(),
            second: quenched_moment(&p, 2, false),
        })
    })
}

/// `Var h_0(t, 0)` against `E int |y| p(t, y) dy`.
pub fn check_variance_identity(spec: &EnsembleSpec) -> Result<IdentityReport> {
    Ok(variance_identity_from(spec, &origin_samples(spec)?))
}

pub fn variance_identity_from(spec: &EnsembleSpec, samples: &[OriginSample]) -> IdentityReport {
    let h = column(samples, |s| s.h);
    let a = column(samples, |s| s.abs_mean);
    let est = paired_estimate(samples.len(), spec.bootstrap_key(), |i| variance_at(&h, i), |i| mean_at(&a, i));
    IdentityReport::paired("variance_identity", CheckMode::Equality, est, default_systematic(est.rhs.mean), snapshot(spec))
        .param("t", spec.t())
}

/// `E int y^2 p` against `t + E (int y p)^2`.
pub fn check_total_variance(spec: &EnsembleSpec) -> Result<IdentityReport> {
    Ok(total_variance_from(spec, &origin_samples(spec)?))
}

pub fn total_variance_from(spec: &EnsembleSpec, samples: &[OriginSample]) -> IdentityReport {
    let t = spec.t();
    let second = column(samples, |s| s.second);
    let mean_sq = column(samples, |s| s.mean * s.mean);
    let est = paired_estimate(samples.len(), spec.bootstrap_key(), |i| mean_at(&second, i), |i| t + mean_at(&mean_sq, i));
    IdentityReport::paired("total_variance", CheckMode::Equality, est, (0.05 * t).max(0.05), snapshot(spec))
        .param("t", t)
        .diag("quenched_variance_mean", est.lhs.mean - (est.rhs.mean - t))
}

/// `Var h_0(t, 0) <= sqrt(t + E (int y p)^2)`.
pub fn check_upper_bound_chain(spec: &EnsembleSpec) -> Result<IdentityReport> {
    Ok(upper_bound_chain_from(spec, &origin_samples(spec)?))
}

pub fn upper_bound_chain_from(spec: &EnsembleSpec, samples: &[OriginSample]) -> IdentityReport {
    let t = spec.t();
    let h = column(samples, |s| s.h);
    let mean_sq = column(samples, |s| s.mean * s.mean);
    let est = paired_estimate(
        samples.len(),
        spec.bootstrap_key(),
        |i| variance_at(&h, i),
        |i| (t + mean_at(&mean_sq, i)).sqrt(),
    );
    IdentityReport::paired("upper_bound_chain", CheckMode::Inequality, est, 0.0, snapshot(spec)).param("t", t)
}

/// `sqrt(E (int y p)^2) <= 4/delta sqrt(Var h_0) + 2 sqrt(t/delta) + delta t`
/// for each `delta`.
pub fn check_delta_tradeoff(spec: &EnsembleSpec, deltas: &[f64]) -> Result<Vec<IdentityReport>> {
    let samples = origin_samples(spec)?;
    delta_tradeoff_from(spec, &samples, deltas)
}

pub fn delta_tradeoff_from(
    spec: &EnsembleSpec,
    samples: &[OriginSample],
    deltas: &[f64],
) -> Result<Vec<IdentityReport>> {
    let t = spec.t();
    let h = column(samples, |s| s.h);
    let mean_sq = column(samples, |s| s.mean * s.mean);
    deltas
        .iter()
        .map(|&delta| {
            if !(delta > 0.0) {
                return Err(SimError::InvalidParams(format!("delta must be positive, got {delta}")));
            }
            let est = paired_estimate(
                samples.len(),
                spec.bootstrap_key(),
                |i| mean_at(&mean_sq, i).sqrt(),
                |i| 4.0 / delta * variance_at(&h, i).sqrt() + 2.0 * (t / delta).sqrt() + delta * t,
            );
            Ok(IdentityReport::paired("lemma32_tradeoff", CheckMode::Inequality, est, 0.0, snapshot(spec))
                .param("t", t)
                .param("delta", delta))
        })
        .collect()
}

/// `E h_theta(t, 0) - E h_0(t, 0) = theta^2 t / 2` for each drift.
pub fn check_free_energy(spec: &EnsembleSpec, thetas: &[f64]) -> Result<Vec<IdentityReport>> {
    let sampler = RowSampler::new(spec)?;
    let shifts: Vec<Vec<f64>> = spec.run(|r| {
        let (row, w) = sampler.draw(r)?;
        let h0 = row.log_pairing(&w.values);
        thetas
            .iter()
            .map(|&theta| {
                endpoint_density(&row, &w, theta)?.ensure_contained(spec.guard_margin)?;
                Ok(drifted_height(&row, &w, theta) - h0)
            })
            .collect()
    })?;
    let t = spec.t();
    Ok(thetas
        .iter()
        .enumerate()
        .map(|(k, &theta)| {
            let d = column(&shifts, |s| s[k]);
            let lhs = estimate(&d, spec.bootstrap_key());
            let rhs = Estimate::exact(0.5 * theta * theta * t);
            IdentityReport::independent("free_energy", CheckMode::Equality, lhs, rhs, default_systematic(rhs.mean), snapshot(spec))
                .param("t", t)
                .param("theta", theta)
        })
        .collect())
}

/// `sqrt(Var h_theta) <= sqrt(Var h_0) + sqrt(|theta| t)`.
pub fn check_var_growth(spec: &EnsembleSpec, theta: f64) -> Result<IdentityReport> {
    let sampler = RowSampler::new(spec)?;
    let pairs: Vec<(f64, f64)> = spec.run(|r| {
        let (row, w) = sampler.draw(r)?;
        endpoint_density(&row, &w, theta)?.ensure_contained(spec.guard_margin)?;
        Ok((row.log_pairing(&w.values), drifted_height(&row, &w, theta)))
    })?;
    let t = spec.t();
    let h0 = column(&pairs, |p| p.0);
    let ht = column(&pairs, |p| p.1);
    let est = paired_estimate(
        pairs.len(),
        spec.bootstrap_key(),
        |i| variance_at(&ht, i).sqrt(),
        |i| variance_at(&h0, i).sqrt() + (theta.abs() * t).sqrt(),
    );
    Ok(IdentityReport::paired("var_growth", CheckMode::Inequality, est, 0.0, snapshot(spec))
        .param("t", t)
        .param("theta", theta))
}

/// Outcome of the shear check: reports plus both annealed laws and the
/// endpoint samples they were compared on.
#[derive(Debug, Clone)]
pub struct ShearOutcome {
    pub reports: Vec<IdentityReport>,
    /// Annealed density of `B_t` under drift `theta`.
    pub tilted: AnnealedDensity,
    pub untilted: AnnealedDensity,
    /// One endpoint per replica, already shifted by `-theta t`.
    pub tilted_endpoints: Vec<f64>,
    pub untilted_endpoints: Vec<f64>,
}

struct ShearSample {
    probs: Vec<f64>,
    mean: f64,
    endpoint: f64,
}

/// Under drift `theta` the endpoint is the undrifted one shifted by
/// `theta t`. The untilted ensemble uses replica ids `M..2M`, so it is
/// independent of the tilted one.
pub fn check_shear_shift(spec: &EnsembleSpec, theta: f64) -> Result<ShearOutcome> {
    let t = spec.t();
    let sampler = RowSampler::new(spec)?;
    let m = spec.replicas as u64;
    let draw = |r: u64, drift: f64| -> Result<ShearSample> {
        let (row, w) = sampler.draw(r)?;
        let p = endpoint_density(&row, &w, drift)?;
        p.ensure_contained(spec.guard_margin)?;
        let endpoint = sample_endpoint(&p, spec.key(r, Purpose::Auxiliary)) - drift * t;
        Ok(ShearSample { mean: p.mean(), endpoint, probs: p.probs })
    };
    let tilted = spec.run(|r| draw(r, theta))?;
    let untilted = spec.run(|r| draw(r + m, 0.0))?;

    let annealed = |samples: &[ShearSample]| -> Result<AnnealedDensity> {
        let mut acc = AnnealedAccumulator::new(&spec.grid);
        for s in samples {
            acc.push(&s.probs);
        }
        acc.finish()
    };
    let tilted_law = annealed(&tilted)?;
    let untilted_law = annealed(&untilted)?;

    let means = column(&tilted, |s| s.mean);
    let lhs = estimate(&means, spec.bootstrap_key());
    let mean_report =
        IdentityReport::independent("shear_shift_mean", CheckMode::Equality, lhs, Estimate::exact(theta * t), 0.0, snapshot(spec))
            .param("t", t)
            .param("theta", theta);

    let shift = theta * t;
    let window = spec.grid.half_width - shift.abs() - spec.grid.dx;
    let (mut l1, mut floor) = (0.0, 0.0);
    for (j, &y) in untilted_law.ys.iter().enumerate() {
        if y.abs() > window {
            continue;
        }
        l1 += (tilted_law.value_at(y + shift) - untilted_law.mean_probs[j]).abs();
        floor += tilted_law.stderr_at(y + shift).hypot(untilted_law.stderr_probs[j]);
    }
    let dx = spec.grid.dx;
    let (l1, floor) = (dx * l1, dx * floor * (2.0 / std::f64::consts::PI).sqrt());

    let a = column(&tilted, |s| s.endpoint);
    let b = column(&untilted, |s| s.endpoint);
    let (ks, p_value) = ks_two_sample(&a, &b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let critical = (-(0.005f64).ln() / 2.0).sqrt() * ((na + nb) / (na * nb)).sqrt();
    let law_report = IdentityReport::independent(
        "shear_shift_law",
        CheckMode::Inequality,
        Estimate::exact(l1),
        Estimate::exact(3.0 * floor),
        0.0,
        snapshot(spec),
    )
    .param("t", t)
    .param("theta", theta)
    .diag("l1_distance", l1)
    .diag("l1_noise_floor", floor)
    .diag("ks_statistic", ks)
    .diag("ks_p_value", p_value)
    .diag("ks_critical_0.01", critical)
    .require(p_value >= 0.01);

    Ok(ShearOutcome {
        reports: vec![mean_report, law_report],
        tilted: tilted_law,
        untilted: untilted_law,
        tilted_endpoints: a,
        untilted_endpoints: b,
    })
}

struct ConvexitySample {
    min_second_difference: f64,
    second_differences: Vec<f64>,
    quenched_variances: Vec<f64>,
}

/// Convexity of `theta -> h_theta(t, 0)` on every replica, and agreement of
/// its second difference with the quenched endpoint variance.
pub fn check_convexity(spec: &EnsembleSpec, thetas: &[f64]) -> Result<IdentityReport> {
    if thetas.len() < 3 || thetas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SimError::InvalidParams("theta grid needs at least 3 increasing values".into()));
    }
    let sampler = RowSampler::new(spec)?;
    let samples = spec.run(|r| {
        let (row, w) = sampler.draw(r)?;
        let hs: Vec<f64> = thetas.iter().map(|&th| drifted_height(&row, &w, th)).collect();
        let mut sample = ConvexitySample {
            min_second_difference: f64::INFINITY,
            second_differences: Vec::new(),
            quenched_variances: Vec::new(),
        };
        for k in 1..thetas.len() - 1 {
            let right = (hs[k + 1] - hs[k]) / (thetas[k + 1] - thetas[k]);
            let left = (hs[k] - hs[k - 1]) / (thetas[k] - thetas[k - 1]);
            let dd = 2.0 * (right - left) / (thetas[k + 1] - thetas[k - 1]);
            let p = endpoint_density(&row, &w, thetas[k])?;
            p.ensure_contained(spec.guard_margin)?;
            sample.min_second_difference = sample.min_second_difference.min(dd);
            sample.second_differences.push(dd);
            sample.quenched_variances.push(p.variance());
        }
        Ok(sample)
    })?;

    let violations = samples.iter().filter(|s| s.min_second_difference < -CONVEXITY_TOLERANCE).count();
    let min_dd = samples.iter().map(|s| s.min_second_difference).fold(f64::INFINITY, f64::min);
    let mut max_gap: f64 = 0.0;
    for s in &samples {
        for (dd, v) in s.second_differences.iter().zip(&s.quenched_variances) {
            max_gap = max_gap.max((dd - v).abs() / v);
        }
    }
    let interior = (thetas.len() - 2) as f64;
    let dds = column(&samples, |s| s.second_differences.iter().sum::<f64>() / interior);
    let vars = column(&samples, |s| s.quenched_variances.iter().sum::<f64>() / interior);
    let est = paired_estimate(samples.len(), spec.bootstrap_key(), |i| mean_at(&dds, i), |i| mean_at(&vars, i));
    let spacing = thetas.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let relative_gap = (est.lhs.mean - est.rhs.mean).abs() / est.rhs.mean;
    // The Taylor remainder of the second difference is O(spacing^2); the 5%
    // agreement is only demanded on fine theta grids.
    let taylor_ok = spacing > 0.1 + 1e-12 || relative_gap < 0.05;
    Ok(IdentityReport::paired("convexity", CheckMode::Descriptive, est, 0.0, snapshot(spec))
        .param("t", spec.t())
        .param("theta_min", thetas[0])
        .param("theta_max", thetas[thetas.len() - 1])
        .param("theta_spacing", spacing)
        .diag("violations", violations as f64)
        .diag("min_second_difference", min_dd)
        .diag("relative_gap", relative_gap)
        .diag("max_replica_relative_gap", max_gap)
        .require(violations == 0 && taylor_ok))
}

/// Per-replica `H(t, x)` and `W(x)` at the requested points.
struct FieldSample {
    hs: Vec<f64>,
    ws: Vec<f64>,
}

fn field_samples(spec: &EnsembleSpec, xs: &[f64]) -> Result<Vec<FieldSample>> {
    let idx: Vec<usize> = xs.iter().map(|&x| grid_index(spec, x)).collect::<Result<_>>()?;
    spec.run(|r| {
        let w = spec.boundary(r);
        let field = spec.solve(r, &w)?;
        let rel = field.relative_heights(&w);
        Ok(FieldSample { hs: idx.iter().map(|&i| rel[i]).collect(), ws: idx.iter().map(|&i| w.values[i]).collect() })
    })
}

/// `Var h_0(t, 0) = Cov[H(t,0) - H(t,x), W(x)] + Cov[H(t,x), H(t,0)]`, one
/// report per `x`.
pub fn check_var_decomposition(spec: &EnsembleSpec, xs: &[f64]) -> Result<Vec<IdentityReport>> {
    let mut points = vec![0.0];
    points.extend_from_slice(xs);
    let samples = field_samples(spec, &points)?;
    let h0 = column(&samples, |s| s.hs[0]);
    Ok(xs
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let hx = column(&samples, |s| s.hs[k + 1]);
            let wx = column(&samples, |s| s.ws[k + 1]);
            let gap: Vec<f64> = h0.iter().zip(&hx).map(|(a, b)| a - b).collect();
            let est = paired_estimate(
                samples.len(),
                spec.bootstrap_key(),
                |i| variance_at(&h0, i),
                |i| covariance_at(&gap, &wx, i) + covariance_at(&hx, &h0, i),
            );
            let cross = bootstrap_estimate(samples.len(), spec.bootstrap_key(), |i| covariance_at(&hx, &h0, i));
            IdentityReport::paired("var_decomposition", CheckMode::Equality, est, default_systematic(est.lhs.mean), snapshot(spec))
                .param("t", spec.t())
                .param("x", x)
                .diag("boundary_term", est.rhs.mean - cross.mean)
                .diag("cross_covariance", cross.mean)
                .diag("cross_covariance_stderr", cross.stderr)
        })
        .collect())
}

/// `Cov[H(t,z), W(x)] = E int p(t,y) 1{z+y>0} min(x, z+y) dy - min(x, z)`.
pub fn check_cov_h_w(spec: &EnsembleSpec, z: f64, x: f64) -> Result<IdentityReport> {
    if x < 0.0 {
        return Err(SimError::InvalidParams(format!("x must be non-negative, got {x}")));
    }
    let zi = grid_index(spec, z)?;
    let xi = grid_index(spec, x)?;
    let sampler = RowSampler::new(spec)?;
    let samples: Vec<(f64, f64, f64)> = spec.run(|r| {
        let (row, w) = sampler.draw(r)?;
        let h_z = if zi == spec.grid.origin() {
            row.log_pairing(&w.values)
        } else {
            spec.solve(r, &w)?.relative_heights(&w)[zi]
        };
        let p = endpoint_density(&row, &w, 0.0)?;
        let formula = p.expect(|y| if z + y > 0.0 { x.min(z + y) } else { 0.0 }) - x.min(z);
        Ok((h_z, w.values[xi], formula))
    })?;
    let h = column(&samples, |s| s.0);
    let wx = column(&samples, |s| s.1);
    let f = column(&samples, |s| s.2);
    let est = paired_estimate(samples.len(), spec.bootstrap_key(), |i| covariance_at(&h, &wx, i), |i| mean_at(&f, i));
    Ok(IdentityReport::paired("cov_H_W", CheckMode::Equality, est, default_systematic(est.rhs.mean), snapshot(spec))
        .param("t", spec.t())
        .param("z", z)
        .param("x", x))
}

#[derive(Debug, Clone)]
pub struct CovDecayOutcome {
    pub reports: Vec<IdentityReport>,
    /// `(x, Cov[H(t,0), H(t,x)])` in the order requested.
    pub curve: Vec<(f64, Estimate)>,
}

/// `Cov[H(t,0), H(t,x)]` for each `x`. Points with `x >= 10 sqrt(t)` must be
/// consistent with zero; nearer points are descriptive. When several
/// positive points are given the covariance at the farthest must not exceed
/// the one at the nearest.
pub fn check_cov_decay(spec: &EnsembleSpec, xs: &[f64]) -> Result<CovDecayOutcome> {
    let t = spec.t();
    let mut points = vec![0.0];
    points.extend_from_slice(xs);
    let samples = field_samples(spec, &points)?;
    let h0 = column(&samples, |s| s.hs[0]);
    let mut curve = Vec::new();
    let mut reports = Vec::new();
    for (k, &x) in xs.iter().enumerate() {
        let hx = column(&samples, |s| s.hs[k + 1]);
        let cov = bootstrap_estimate(samples.len(), spec.bootstrap_key(), |i| covariance_at(&h0, &hx, i));
        let far = x.abs() >= 10.0 * t.sqrt() - 1e-9;
        let mode = if far { CheckMode::Equality } else { CheckMode::Descriptive };
        reports.push(
            IdentityReport::independent("cov_decay", mode, cov, Estimate::exact(0.0), 0.0, snapshot(spec))
                .param("t", t)
                .param("x", x),
        );
        curve.push((x, cov));
    }
    let positive: Vec<&(f64, Estimate)> = curve.iter().filter(|(x, _)| *x > 0.0).collect();
    if positive.len() >= 2 {
        let near = positive.iter().min_by(|a, b| a.0.total_cmp(&b.0)).expect("non-empty");
        let far = positive.iter().max_by(|a, b| a.0.total_cmp(&b.0)).expect("non-empty");
        let abs = |e: &Estimate| Estimate { mean: e.mean.abs(), ..*e };
        reports.push(
            IdentityReport::independent("cov_decay_envelope", CheckMode::Inequality, abs(&far.1), abs(&near.1), 0.0, snapshot(spec))
                .param("t", t)
                .param("x_near", near.0)
                .param("x_far", far.0),
        );
    }
    Ok(CovDecayOutcome { reports, curve })
}

#[derive(Debug, Clone)]
pub struct BurgersOutcome {
    pub reports: Vec<IdentityReport>,
    pub lags: Vec<f64>,
    /// Slope two-point function at each lag.
    pub two_point: Vec<f64>,
    pub two_point_stderr: Vec<f64>,
    /// Annealed endpoint density at each lag.
    pub density: Vec<f64>,
    pub density_stderr: Vec<f64>,
    pub l1_distance: f64,
}

struct BurgersSample {
    two_point: Vec<f64>,
    density: Vec<f64>,
}

/// Pointwise mean and standard error of equally long per-replica vectors.
fn pointwise(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let width = rows[0].len();
    let mut means = Vec::with_capacity(width);
    let mut errs = Vec::with_capacity(width);
    for k in 0..width {
        let mean = rows.iter().map(|r| r[k]).collect::<CompensatedSum>().value() / n;
        let ss = rows.iter().map(|r| (r[k] - mean).powi(2)).collect::<CompensatedSum>().value();
        means.push(mean);
        errs.push(if rows.len() > 1 { (ss / (n - 1.0) / n).sqrt() } else { f64::NAN });
    }
    (means, errs)
}

/// The slope two-point function `E[d_x h(t,x) d_x W(x - y)]`, averaged over
/// interior translates `x`, against the annealed endpoint density at `y`.
/// Compared in L1 over `|y| <= 3 sqrt(t)` with tolerance `l1_tolerance`.
pub fn check_burgers_density(spec: &EnsembleSpec, l1_tolerance: f64) -> Result<BurgersOutcome> {
    let g = spec.grid;
    let t = spec.t();
    let dx = g.dx;
    let max_lag = (4.0 * t.sqrt() / dx).ceil() as usize;
    // Keep translates a light-cone away from the reflecting walls.
    let wall = max_lag + spec.guard_margin;
    let origin = g.origin();
    let lo = wall + max_lag;
    let hi = g.n_sites.saturating_sub(wall + max_lag + 2);
    if lo >= hi || max_lag >= origin {
        return Err(SimError::InvalidParams(format!(
            "domain half-width {} is too small for lags up to {} at t = {t}",
            g.half_width,
            max_lag as f64 * dx
        )));
    }
    let translates = (hi - lo + 1) as f64;
    let sampler = RowSampler::new(spec)?;
    let samples = spec.run(|r| {
        let (row, w) = sampler.draw(r)?;
        let heights = spec.solve(r, &w)?.heights();
        let dh: Vec<f64> = heights.windows(2).map(|p| p[1] - p[0]).collect();
        let dw: Vec<f64> = w.values.windows(2).map(|p| p[1] - p[0]).collect();
        let mut two_point = Vec::with_capacity(2 * max_lag + 1);
        for lag in -(max_lag as isize)..=(max_lag as isize) {
            let mut acc = CompensatedSum::new();
            for i in lo..=hi {
                acc.add(dh[i] * dw[(i as isize - lag) as usize]);
            }
            two_point.push(acc.value() / translates / (dx * dx));
        }
        let p = endpoint_density(&row, &w, 0.0)?;
        let density = p.probs[origin - max_lag..=origin + max_lag].to_vec();
        Ok(BurgersSample { two_point, density })
    })?;

    let lags: Vec<f64> = (-(max_lag as isize)..=(max_lag as isize)).map(|k| k as f64 * dx).collect();
    let tp_rows: Vec<Vec<f64>> = samples.iter().map(|s| s.two_point.clone()).collect();
    let de_rows: Vec<Vec<f64>> = samples.iter().map(|s| s.density.clone()).collect();
    let diff_rows: Vec<Vec<f64>> =
        samples.iter().map(|s| s.two_point.iter().zip(&s.density).map(|(a, b)| a - b).collect()).collect();
    let (two_point, two_point_stderr) = pointwise(&tp_rows);
    let (density, density_stderr) = pointwise(&de_rows);
    let (_, diff_stderr) = pointwise(&diff_rows);

    let window = 3.0 * t.sqrt() + 1e-9;
    let noise_scale = (2.0 / std::f64::consts::PI).sqrt();
    let (mut l1, mut floor) = (0.0, 0.0);
    for k in 0..lags.len() {
        if lags[k].abs() <= window {
            l1 += (two_point[k] - density[k]).abs();
            floor += noise_scale * diff_stderr[k];
        }
    }
    let (l1, floor) = (dx * l1, dx * floor);

    let (mut refl, mut refl_floor) = (0.0, 0.0);
    let last = lags.len() - 1;
    for k in 0..lags.len() {
        if lags[k].abs() <= window {
            refl += (two_point[k] - two_point[last - k]).abs();
            refl_floor += noise_scale * two_point_stderr[k].hypot(two_point_stderr[last - k]);
        }
    }
    let (refl, refl_floor) = (dx * refl, dx * refl_floor);

    let tp_mass = column(&samples, |s| dx * s.two_point.iter().sum::<f64>());
    let de_mass = column(&samples, |s| dx * s.density.iter().sum::<f64>());
    let mass = paired_estimate(samples.len(), spec.bootstrap_key(), |i| mean_at(&tp_mass, i), |i| mean_at(&de_mass, i));

    let reports = vec![
        IdentityReport::independent(
            "burgers_density",
            CheckMode::Inequality,
            Estimate::exact(l1),
            Estimate::exact(l1_tolerance),
            0.0,
            snapshot(spec),
        )
        .param("t", t)
        .param("window", window)
        .diag("l1_distance", l1)
        .diag("l1_noise_floor", floor),
        IdentityReport::paired("burgers_normalization", CheckMode::Equality, mass, default_systematic(1.0), snapshot(spec))
            .param("t", t)
            .param("max_lag", lags[last]),
        IdentityReport::independent(
            "burgers_symmetry",
            CheckMode::Inequality,
            Estimate::exact(refl),
            Estimate::exact(3.0 * refl_floor),
            0.0,
            snapshot(spec),
        )
        .param("t", t)
        .diag("reflection_l1", refl)
        .diag("reflection_noise_floor", refl_floor),
    ];
    Ok(BurgersOutcome { reports, lags, two_point, two_point_stderr, density, density_stderr, l1_distance: l1 })
}

#[derive(Debug, Clone)]
pub struct TailOutcome {
    pub reports: Vec<IdentityReport>,
    pub density: AnnealedDensity,
    pub fit: TailFit,
}

/// Annealed endpoint density: Gaussian tail (quadratic beats linear decay of
/// `log E p` on `1 <= |y| <= 3 sqrt(t)`, and `log E p` is linear in `y^2`
/// with `R^2 > 0.95` on `|y| <= 3`) and evenness.
pub fn check_gaussian_tail(spec: &EnsembleSpec) -> Result<TailOutcome> {
    let t = spec.t();
    let sampler = RowSampler::new(spec)?;
    let densities: Vec<EndpointDensity> = spec.run(|r| {
        let (row, w) = sampler.draw(r)?;
        endpoint_density(&row, &w, 0.0)
    })?;
    let density = annealed_density(&densities)?;
    let fit = tail_fit(&density, 1.0, 3.0 * t.sqrt());
    let core = tail_fit(&density, 0.0, 3.0);
    let tail = IdentityReport::independent(
        "gaussian_tail",
        CheckMode::Inequality,
        Estimate::exact(fit.aic_quadratic),
        Estimate::exact(fit.aic_linear),
        0.0,
        snapshot(spec),
    )
    .param("t", t)
    .diag("quadratic_slope", fit.quadratic.slope)
    .diag("quadratic_r_squared", fit.quadratic.r_squared)
    .diag("linear_r_squared", fit.linear.r_squared)
    .diag("core_r_squared", core.quadratic.r_squared)
    .require(core.quadratic.r_squared > 0.95);
    let (refl, floor) = density.reflection_distance(3.0 * t.sqrt());
    let symmetry = IdentityReport::independent(
        "annealed_symmetry",
        CheckMode::Inequality,
        Estimate::exact(refl),
        Estimate::exact(3.0 * floor),
        0.0,
        snapshot(spec),
    )
    .param("t", t)
    .diag("reflection_l1", refl)
    .diag("noise_floor", floor);
    Ok(TailOutcome { reports: vec![tail, symmetry], density, fit })
}

/// Largest relative gap between the forward solution and the green-row
/// pairing over the ensemble.
pub fn check_duality(spec: &EnsembleSpec) -> Result<IdentityReport> {
    let residuals = spec.run(|r| duality_check(&spec.noise_handle(r), &spec.grid, &spec.boundary(r)))?;
    let max = residuals.iter().copied().fold(0.0, f64::max);
    let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
    Ok(IdentityReport::independent(
        "duality_selftest",
        CheckMode::Inequality,
        Estimate::exact(max),
        Estimate::exact(DUALITY_TOLERANCE),
        0.0,
        snapshot(spec),
    )
    .with_origin(Origin::Exact)
    .param("t", spec.t())
    .diag("max_residual", max)
    .diag("mean_residual", mean))
}

/// `psi(t) = Var h_0(t, 0)` and `c(t) = E h_0(t, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub t: f64,
    pub psi: Estimate,
    pub c: Estimate,
    pub abs_moment: Estimate,
}

pub fn scaling_point(spec: &EnsembleSpec, samples: &[OriginSample]) -> ScalingPoint {
    let h = column(samples, |s| s.h);
    let a = column(samples, |s| s.abs_mean);
    ScalingPoint {
        t: spec.t(),
        psi: variance_estimate(&h, spec.bootstrap_key()),
        c: estimate(&h, spec.bootstrap_key()),
        abs_moment: estimate(&a, spec.bootstrap_key()),
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub points: Vec<ScalingPoint>,
    pub fit: ExponentFit,
    pub report: IdentityReport,
}

/// Fits `psi(t) ~ t^slope` over one ensemble per time; passes when the
/// slope lies in `window`.
pub fn exponent_sweep(specs: &[EnsembleSpec], window: (f64, f64)) -> Result<SweepOutcome> {
    let points: Vec<ScalingPoint> =
        specs.iter().map(|s| Ok(scaling_point(s, &origin_samples(s)?))).collect::<Result<_>>()?;
    fit_sweep(specs, points, window)
}

pub fn fit_sweep(specs: &[EnsembleSpec], points: Vec<ScalingPoint>, window: (f64, f64)) -> Result<SweepOutcome> {
    let fit = fit_exponent(&points.iter().map(|p| (p.t, p.psi)).collect::<Vec<_>>())?;
    let slope = Estimate {
        mean: fit.slope,
        stderr: fit.slope_stderr,
        ci_low: fit.slope - 2.576 * fit.slope_stderr,
        ci_high: fit.slope + 2.576 * fit.slope_stderr,
        n: points.len(),
    };
    let first = specs.first().ok_or(SimError::EmptyEnsemble)?;
    let report = IdentityReport::independent(
        "exponent_sweep",
        CheckMode::Descriptive,
        slope,
        Estimate::exact(2.0 / 3.0),
        0.0,
        snapshot(first),
    )
    .param("window_low", window.0)
    .param("window_high", window.1)
    .diag("intercept", fit.intercept)
    .diag("r_squared", fit.r_squared)
    .require(fit.slope >= window.0 && fit.slope <= window.1);
    Ok(SweepOutcome { points, fit, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::InitialData;
    use crate::grid::GridSpec;
    use crate::rng::NoiseMode;

    fn spec(dx: f64, l: f64, t: f64, m: usize) -> EnsembleSpec {
        EnsembleSpec::new(GridSpec::new(dx, None, l, t).unwrap(), m, 2024)
    }

    #[test]
    fn variance_identity_at_short_time() {
        let r = check_variance_identity(&spec(0.1, 6.0, 0.25, 400)).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn flat_silent_total_variance_is_exact() {
        let s = spec(0.1, 8.0, 1.0, 3).with_noise(NoiseMode::Off).with_initial(InitialData::Flat);
        let r = check_total_variance(&s).unwrap();
        assert!(r.discrepancy.abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn zero_drift_free_energy_is_identically_zero() {
        let r = check_free_energy(&spec(0.1, 6.0, 0.5, 50), &[0.0]).unwrap();
        assert_eq!(r[0].lhs.mean, 0.0);
        assert!(r[0].pass);
    }

    #[test]
    fn silent_flat_curvature_is_time() {
        let s = spec(0.05, 10.0, 1.0, 2).with_noise(NoiseMode::Off).with_initial(InitialData::Flat);
        let r = check_convexity(&s, &[-0.05, 0.0, 0.05]).unwrap();
        assert!((r.lhs.mean - 1.0).abs() < 0.02, "{r:?}");
        assert_eq!(r.diagnostics["violations"], 0.0);
    }

    #[test]
    fn decomposition_at_origin_is_exact() {
        let r = check_var_decomposition(&spec(0.1, 6.0, 0.5, 200), &[0.0]).unwrap();
        assert!(r[0].discrepancy.abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn cov_h_w_vanishes_at_origin() {
        let r = check_cov_h_w(&spec(0.1, 6.0, 0.5, 100), 0.0, 0.0).unwrap();
        assert_eq!(r.lhs.mean, 0.0);
        assert!(r.rhs.mean.abs() < 1e-12);
    }

    #[test]
    fn off_lattice_points_are_rejected() {
        let err = check_cov_h_w(&spec(0.1, 6.0, 0.5, 10), 0.0, 100.0).unwrap_err();
        assert!(matches!(err, SimError::OutOfDomain(_)));
    }

    #[test]
    fn duality_holds_on_small_ensemble() {
        let r = check_duality(&spec(0.1, 5.0, 0.5, 5)).unwrap();
        assert!(r.pass && r.lhs.mean < 1e-10, "{r:?}");
    }

    #[test]
    fn zero_drift_shear_is_consistent() {
        let out = check_shear_shift(&spec(0.1, 6.0, 0.5, 300), 0.0).unwrap();
        assert_eq!(out.reports.len(), 2);
        assert_eq!(out.tilted_endpoints.len(), 300);
        assert!(out.reports[0].pass, "{:?}", out.reports[0]);
    }
}
