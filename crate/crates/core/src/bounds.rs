//! The inequalities behind the `t^{2/3}` lower bound, each evaluated on an
//! ensemble: the Chebyshev tail, the `X`/`Y` coupling, the three tail
//! lemmas of the union bound, the Girsanov second moment and the final
//! certificate.

use serde::{Deserialize, Serialize};

use crate::boundary::tilt_path;
use crate::ensemble::{EnsembleSpec, RowSampler};
use crate::error::{Result, SimError};
use crate::identities::{drifted_height, origin_samples, scaling_point};
use crate::numeric::logsumexp;
use crate::polymer::endpoint_density;
use crate::report::{CheckMode, ConfigSnapshot, IdentityReport, Origin};
use crate::rng::{aux, make_key, NoiseMode, Purpose};
use crate::stats::{estimate, mean_at, paired_estimate, variance_at, Estimate};

/// Floating-point slack for the pathwise coupling inequality.
pub const PATHWISE_TOLERANCE: f64 = 1e-9;

/// Parameters of the lower-bound argument at time `t`:
/// `theta = lambda t^{-1/3}`, `u = (M - lambda) t^{2/3}`, `n = u + theta t`,
/// `c_3 = t^{1/3}`, `c_2 = c(t) + c_3`, `c_1 = c_2 + c_3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundParams {
    pub lambda: f64,
    pub m_cap: f64,
    pub t: f64,
    pub theta: f64,
    pub n: f64,
    pub u: f64,
    pub c3: f64,
}

impl LowerBoundParams {
    pub fn new(lambda: f64, m_cap: f64, t: f64) -> Result<Self> {
        if !(lambda > 0.0) || !(lambda * lambda > 4.0) {
            return Err(SimError::InvalidParams(format!("lambda^2 > 4 required, got lambda = {lambda}")));
        }
        if !(m_cap > lambda) {
            return Err(SimError::InvalidParams(format!("M > lambda required, got M = {m_cap}, lambda = {lambda}")));
        }
        if !(lambda.sqrt() / (0.5 * lambda * lambda - 2.0) < 1.0) {
            return Err(SimError::InvalidParams(format!(
                "sqrt(lambda) / (lambda^2/2 - 2) < 1 required, got {}",
                lambda.sqrt() / (0.5 * lambda * lambda - 2.0)
            )));
        }
        if !(t >= 1.0) {
            return Err(SimError::InvalidParams(format!("t >= 1 required, got {t}")));
        }
        let (t13, t23) = (t.cbrt(), t.cbrt().powi(2));
        let theta = lambda / t13;
        let u = (m_cap - lambda) * t23;
        Ok(Self { lambda, m_cap, t, theta, n: u + theta * t, u, c3: t13 })
    }

    pub fn c2(&self, c: f64) -> f64 {
        c + self.c3
    }

    pub fn c1(&self, c: f64) -> f64 {
        self.c2(c) + self.c3
    }

    fn check_time(&self, spec: &EnsembleSpec) -> Result<()> {
        if (self.t - spec.t()).abs() > 1e-9 * self.t {
            return Err(SimError::InvalidParams(format!(
                "parameters are for t = {} but the grid runs to t = {}",
                self.t,
                spec.t()
            )));
        }
        Ok(())
    }

    fn tag(&self, report: IdentityReport) -> IdentityReport {
        report.param("lambda", self.lambda).param("m_cap", self.m_cap).param("theta", self.theta).param("n", self.n)
    }
}

/// `P_theta(B_t > n) <= Var h_0(t, 0) / u` with `u = n - theta t > 0`.
pub fn chebyshev_right_tail(spec: &EnsembleSpec, theta: f64, n: f64) -> Result<IdentityReport> {
    let t = spec.t();
    let u = n - theta * t;
    if !(u > 0.0) {
        return Err(SimError::InvalidParams(format!("n - theta t must be positive, got {u}")));
    }
    let sampler = RowSampler::new(spec)?;
    let samples: Vec<(f64, f64)> = spec.run(|r| {
        let (row, w) = sampler.draw(r)?;
        let p = endpoint_density(&row, &w, theta)?;
        p.ensure_contained(spec.guard_margin)?;
        Ok((p.mass_above(n), row.log_pairing(&w.values)))
    })?;
    let above: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let h: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let est = paired_estimate(samples.len(), spec.bootstrap_key(), |i| mean_at(&above, i), |i| variance_at(&h, i) / u);
    Ok(IdentityReport::paired("chebyshev_tail", CheckMode::Inequality, est, 0.0, ConfigSnapshot::from(spec))
        .param("t", t)
        .param("theta", theta)
        .param("n", n)
        .param("u", u))
}

pub fn chebyshev_for(spec: &EnsembleSpec, params: &LowerBoundParams) -> Result<IdentityReport> {
    params.check_time(spec)?;
    Ok(params.tag(chebyshev_right_tail(spec, params.theta, params.n)?))
}

/// One replica of the coupling: `X` is the drifted mass ratio above/below
/// `n`, `Y = h_theta(t,0) - h~_theta(t,0)`, and `exponential` is the
/// independent Exp(1) variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingSample {
    pub replica_id: u64,
    pub x: f64,
    pub y: f64,
    pub log1p_x: f64,
    pub exponential: f64,
}

#[derive(Debug, Clone)]
pub struct CouplingOutcome {
    pub samples: Vec<CouplingSample>,
    pub report: IdentityReport,
}

/// `log(1 + e^a)` without overflow.
fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

fn exponential_draw(spec: &EnsembleSpec, replica: u64) -> f64 {
    spec.key(replica, Purpose::Auxiliary).normals(aux::EXPONENTIAL).next_exponential()
}

/// Checks `Y <= log(1 + X)` on every replica (an error if any replica breaks
/// it by more than [`PATHWISE_TOLERANCE`]) and `P_theta(B_t <= n) <= P(Y <= X)`
/// with an independent exponential `X`. `Y` comes from two forward solves
/// sharing the noise; `X` from the green row.
pub fn coupling_xy(spec: &EnsembleSpec, theta: f64, n: f64) -> Result<CouplingOutcome> {
    let sampler = RowSampler::new(spec)?;
    let samples = spec.run(|r| {
        let (row, w) = sampler.draw(r)?;
        let drifted = w.with_drift(theta);
        let tilted = tilt_path(&w, theta, n)?;
        endpoint_density(&row, &w, theta)?.ensure_contained(spec.guard_margin)?;
        let logs = row.log_weights();
        let (mut above, mut below) = (Vec::new(), Vec::new());
        for (j, lz) in logs.iter().enumerate() {
            let v = lz + drifted.values[j];
            if row.grid.x(j) > n {
                above.push(v);
            } else {
                below.push(v);
            }
        }
        let log_x = logsumexp(&above) - logsumexp(&below);
        let y = spec.solve(r, &drifted)?.h_origin() - spec.solve(r, &tilted)?.h_origin();
        let log1p_x = softplus(log_x);
        let excess = y - log1p_x;
        if excess > PATHWISE_TOLERANCE {
            return Err(SimError::PathwiseViolation { replica: r, excess });
        }
        Ok(CouplingSample { replica_id: r, x: log_x.exp(), y, log1p_x, exponential: exponential_draw(spec, r) })
    })?;
    let below: Vec<f64> = samples.iter().map(|s| 1.0 / (1.0 + s.x)).collect();
    let hit: Vec<f64> = samples.iter().map(|s| if s.y <= s.exponential { 1.0 } else { 0.0 }).collect();
    let conditional: Vec<f64> = samples.iter().map(|s| (-s.y.max(0.0)).exp()).collect();
    let est = paired_estimate(samples.len(), spec.bootstrap_key(), |i| mean_at(&below, i), |i| mean_at(&hit, i));
    let max_excess = samples.iter().map(|s| s.y - s.log1p_x).fold(f64::NEG_INFINITY, f64::max);
    let report = IdentityReport::paired("coupling", CheckMode::Inequality, est, 0.0, ConfigSnapshot::from(spec))
        .param("t", spec.t())
        .param("theta", theta)
        .param("n", n)
        .diag("pathwise_fraction", 1.0)
        .diag("max_excess", max_excess)
        .diag("conditional_rhs", conditional.iter().sum::<f64>() / conditional.len() as f64);
    Ok(CouplingOutcome { samples, report })
}

/// `E G^2 = e^{theta^2 n}` for `G = exp(theta W(n) - theta^2 n / 2)`, from
/// `samples` draws of `W(n) ~ N(0, n)`.
pub fn girsanov_moment(theta: f64, n: f64, samples: usize, seed: u64) -> Result<IdentityReport> {
    if !(n > 0.0) || samples == 0 {
        return Err(SimError::InvalidParams(format!("need n > 0 and at least one draw, got n = {n}")));
    }
    let key = make_key(seed, 0, Purpose::Auxiliary);
    let mut normals = key.normals(aux::GIRSANOV);
    let sd = n.sqrt();
    let g2: Vec<f64> = (0..samples).map(|_| (2.0 * theta * sd * normals.next_normal() - theta * theta * n).exp()).collect();
    let lhs = estimate(&g2, make_key(seed, u64::MAX, Purpose::Auxiliary));
    let rhs = Estimate::exact((theta * theta * n).exp());
    let config = ConfigSnapshot { grid: None, replicas: samples, master_seed: seed, noise: NoiseMode::Off };
    Ok(IdentityReport::independent("girsanov", CheckMode::Equality, lhs, rhs, 0.05 * rhs.mean, config)
        .param("theta", theta)
        .param("n", n)
        .diag("ratio", lhs.mean / rhs.mean))
}

struct TailSample {
    h0: f64,
    h_drift: f64,
    h_tilt: f64,
    exponential: f64,
}

/// The three terms of the union bound `P(Y <= X) <= P(h_theta <= c_1) +
/// P(h~_theta > c_2) + P(X > c_3)`, each against its bound, plus the union
/// bound itself. `c(t)` and `psi(t)` are re-estimated inside every bootstrap
/// resample so their uncertainty enters the combined sigma.
pub fn tail_lemmas(spec: &EnsembleSpec, params: &LowerBoundParams) -> Result<Vec<IdentityReport>> {
    params.check_time(spec)?;
    let (theta, n, t, c3) = (params.theta, params.n, params.t, params.c3);
    let sampler = RowSampler::new(spec)?;
    let samples = spec.run(|r| {
        let (row, w) = sampler.draw(r)?;
        let tilted = tilt_path(&w, theta, n)?;
        endpoint_density(&row, &w, theta)?.ensure_contained(spec.guard_margin)?;
        endpoint_density(&row, &tilted, 0.0)?.ensure_contained(spec.guard_margin)?;
        Ok(TailSample {
            h0: row.log_pairing(&w.values),
            h_drift: drifted_height(&row, &w, theta),
            h_tilt: row.log_pairing(&tilted.values),
            exponential: exponential_draw(spec, r),
        })
    })?;
    let m = samples.len();
    let key = spec.bootstrap_key();
    let h0: Vec<f64> = samples.iter().map(|s| s.h0).collect();
    let fraction = |idx: &[usize], pred: &dyn Fn(&TailSample) -> bool| {
        idx.iter().filter(|&&i| pred(&samples[i])).count() as f64 / idx.len() as f64
    };
    let config = ConfigSnapshot::from(spec);

    let exp_tail = paired_estimate(m, key, |i| fraction(i, &|s| s.exponential > c3), |_| (-c3).exp());
    let exp_report = IdentityReport::paired("tail_exponential", CheckMode::Equality, exp_tail, 0.0, config)
        .param("c3", c3)
        .diag("exact", (-c3).exp());

    let gap = 0.5 * theta * theta * t - 2.0 * c3;
    let lower = paired_estimate(
        m,
        key,
        |i| {
            let c1 = params.c1(mean_at(&h0, i));
            fraction(i, &|s| s.h_drift <= c1)
        },
        |i| (variance_at(&h0, i).sqrt() + (theta * t).sqrt()) / gap,
    );
    let lower_report = IdentityReport::paired("tail_lemma_drifted", CheckMode::Inequality, lower, 0.0, config)
        .param("t", t)
        .diag("denominator", gap);

    let log_girsanov = 0.5 * theta * theta * n;
    let upper = paired_estimate(
        m,
        key,
        |i| {
            let c2 = params.c2(mean_at(&h0, i));
            fraction(i, &|s| s.h_tilt > c2)
        },
        |i| (log_girsanov + (variance_at(&h0, i).sqrt() / c3).ln()).min(700.0).exp(),
    );
    let upper_report = IdentityReport::paired("tail_lemma_tilted", CheckMode::Inequality, upper, 0.0, config)
        .param("t", t)
        .diag("log_girsanov_factor", log_girsanov);

    let union = paired_estimate(
        m,
        key,
        |i| fraction(i, &|s| s.h_drift - s.h_tilt <= s.exponential),
        |i| {
            let c = mean_at(&h0, i);
            let (c1, c2) = (params.c1(c), params.c2(c));
            fraction(i, &|s| s.h_drift <= c1) + fraction(i, &|s| s.h_tilt > c2) + fraction(i, &|s| s.exponential > c3)
        },
    );
    let union_report = IdentityReport::paired("union_bound", CheckMode::Inequality, union, 0.0, config).param("t", t);

    Ok([exp_report, lower_report, upper_report, union_report].into_iter().map(|r| params.tag(r)).collect())
}

/// Terms of `1 <= a r + b sqrt(r) + sqrt(lambda)/(lambda^2/2 - 2) + e^{-t^{1/3}}`
/// with `r = psi / t^{2/3}`, `a = 1/(M - lambda)` and
/// `b = 1/(lambda^2/2 - 2) + e^{lambda^2 M / 2}`, evaluated in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateTerms {
    pub ratio: f64,
    pub a: f64,
    pub log_b: f64,
    pub constant: f64,
    pub time_term: f64,
    /// Log of the right-hand side.
    pub log_rhs: f64,
    /// Smallest `psi / t^{2/3}` for which the inequality can hold.
    pub implied_lower_bound: f64,
}

pub fn certificate_terms(params: &LowerBoundParams, psi: f64) -> CertificateTerms {
    let lam2 = 0.5 * params.lambda * params.lambda - 2.0;
    let ratio = psi / params.t.cbrt().powi(2);
    let a = 1.0 / (params.m_cap - params.lambda);
    let log_b = logsumexp(&[-lam2.ln(), 0.5 * params.lambda * params.lambda * params.m_cap]);
    let constant = params.lambda.sqrt() / lam2;
    let time_term = (-params.t.cbrt()).exp();
    let log_rhs = logsumexp(&[(a * ratio).ln(), log_b + 0.5 * ratio.ln(), constant.ln(), time_term.ln()]);
    // a s^2 + b s >= R with s = sqrt(r); the stable root avoids cancelling
    // against the huge b.
    let slack = 1.0 - constant - time_term;
    let implied_lower_bound = if slack <= 0.0 {
        0.0
    } else {
        let b = log_b.exp();
        let s = 2.0 * slack / (b + (b * b + 4.0 * a * slack).sqrt());
        s * s
    };
    CertificateTerms { ratio, a, log_b, constant, time_term, log_rhs, implied_lower_bound }
}

/// Certificate for a given `psi(t)` estimate: passes when the log of the
/// right side is at least 0, within 3 sigma.
pub fn certificate(params: &LowerBoundParams, psi: Estimate, config: ConfigSnapshot) -> IdentityReport {
    let terms = certificate_terms(params, psi.mean);
    let sigma = if psi.has_stderr() && psi.stderr > 0.0 {
        let hi = certificate_terms(params, psi.mean + psi.stderr).log_rhs;
        let lo = certificate_terms(params, (psi.mean - psi.stderr).max(f64::MIN_POSITIVE)).log_rhs;
        0.5 * (hi - lo)
    } else {
        0.0
    };
    let rhs = Estimate {
        mean: terms.log_rhs,
        stderr: sigma,
        ci_low: terms.log_rhs - 2.576 * sigma,
        ci_high: terms.log_rhs + 2.576 * sigma,
        n: psi.n,
    };
    let origin = if psi.stderr == 0.0 { Origin::Exact } else { Origin::Simulation };
    params
        .tag(IdentityReport::independent("lower_bound_certificate", CheckMode::Inequality, Estimate::exact(0.0), rhs, 0.0, config))
        .with_origin(origin)
        .param("t", params.t)
        .diag("psi", psi.mean)
        .diag("psi_over_t23", terms.ratio)
        .diag("a", terms.a)
        .diag("log_b", terms.log_b)
        .diag("constant_term", terms.constant)
        .diag("time_term", terms.time_term)
        .diag("implied_lower_bound", terms.implied_lower_bound)
}

/// Estimates `psi(t)` on the ensemble and evaluates the certificate.
pub fn lower_bound_certificate(spec: &EnsembleSpec, params: &LowerBoundParams) -> Result<IdentityReport> {
    params.check_time(spec)?;
    let point = scaling_point(spec, &origin_samples(spec)?);
    Ok(certificate(params, point.psi, ConfigSnapshot::from(spec)).diag("c", point.c.mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    #[test]
    fn parameter_algebra_is_exact() {
        let p = LowerBoundParams::new(3.0, 8.0, 2.0).unwrap();
        assert_eq!(p.n, p.u + p.theta * p.t);
        assert_eq!(p.c1(0.37), p.c2(0.37) + p.c3);
        assert!((p.n - 8.0 * 2f64.powf(2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn parameter_constraints() {
        assert!(matches!(LowerBoundParams::new(2.0, 8.0, 2.0), Err(SimError::InvalidParams(_))));
        assert!(matches!(LowerBoundParams::new(3.0, 2.5, 2.0), Err(SimError::InvalidParams(_))));
        assert!(matches!(LowerBoundParams::new(3.0, 8.0, 0.5), Err(SimError::InvalidParams(_))));
        assert!(LowerBoundParams::new(3.0, 8.0, 1.0).is_ok());
    }

    #[test]
    fn synthetic_certificate_terms() {
        let p = LowerBoundParams::new(3.0, 8.0, 8.0).unwrap();
        let terms = certificate_terms(&p, 4.0);
        assert!((terms.ratio - 1.0).abs() < 1e-12);
        assert!((terms.a - 0.2).abs() < 1e-15);
        assert!((terms.log_b - (0.4 + 36f64.exp()).ln()).abs() < 1e-12);
        assert!((terms.constant - 3f64.sqrt() / 2.5).abs() < 1e-15);
        assert!((terms.time_term - (-2f64).exp()).abs() < 1e-15);
        let direct = 0.2 + 0.4 + 36f64.exp() + 3f64.sqrt() / 2.5 + (-2f64).exp();
        assert!((terms.log_rhs - direct.ln()).abs() < 1e-12);
        let r = certificate(&p, Estimate::exact(4.0), ConfigSnapshot {
            grid: None,
            replicas: 1,
            master_seed: 0,
            noise: NoiseMode::Off,
        });
        assert!(r.pass && r.origin == Origin::Exact);
    }

    #[test]
    fn implied_bound_solves_the_quadratic() {
        let p = LowerBoundParams::new(3.0, 4.0, 8.0).unwrap();
        let r = certificate_terms(&p, 1.0).implied_lower_bound;
        let b = certificate_terms(&p, 1.0).log_b.exp();
        assert!(r > 0.0);
        let lhs = r + b * r.sqrt() + 3f64.sqrt() / 2.5 + (-2f64).exp();
        assert!((lhs - 1.0).abs() < 1e-9, "{lhs}");
        // Below the constant terms' reach there is nothing to certify.
        let short = LowerBoundParams::new(3.0, 4.0, 1.0).unwrap();
        assert_eq!(certificate_terms(&short, 1.0).implied_lower_bound, 0.0);
    }

    #[test]
    fn girsanov_zero_drift_is_exactly_one() {
        let r = girsanov_moment(0.0, 2.0, 1000, 5).unwrap();
        assert_eq!(r.lhs.mean, 1.0);
        assert!(r.pass);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!((softplus(-800.0)).abs() < 1e-300);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_drift_coupling_is_trivial() {
        let g = GridSpec::new(0.1, None, 6.0, 0.5).unwrap();
        let out = coupling_xy(&EnsembleSpec::new(g, 20, 3), 0.0, 2.0).unwrap();
        assert!(out.samples.iter().all(|s| s.y == 0.0 && s.x > 0.0));
    }

    #[test]
    fn chebyshev_beyond_the_domain_is_trivial() {
        let g = GridSpec::new(0.1, None, 6.0, 0.5).unwrap();
        let r = chebyshev_right_tail(&EnsembleSpec::new(g, 50, 3), 0.0, 100.0).unwrap();
        assert_eq!(r.lhs.mean, 0.0);
        assert!(r.pass);
    }
}
