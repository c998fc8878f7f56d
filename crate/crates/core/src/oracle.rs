//! Ground truth independent of Monte Carlo sampling.
//!
//! On a lattice with a handful of sites and steps every expectation is a
//! finite-dimensional Gaussian integral over the noise cells and the
//! boundary increments, which tensor-product Gauss–Hermite quadrature
//! evaluates to high accuracy. The integrand runs the same stepper as the
//! simulation, fed with quadrature nodes instead of random draws.
//!
//! With the noise switched off the kernel is deterministic and only the
//! initial profile is random; [`zero_noise_oracle`] averages over it alone.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::BoundaryPath;
use crate::ensemble::{EnsembleSpec, InitialData};
use crate::error::{Result, SimError};
use crate::grid::GridSpec;
use crate::identities::{check_cov_h_w, origin_samples};
use crate::numeric::CompensatedSum;
use crate::polymer::{endpoint_density, EndpointDensity};
use crate::report::{CheckMode, ConfigSnapshot, IdentityReport, Origin};
use crate::rng::{InjectedNoise, NoiseHandle, NoiseMode};
use crate::she::Stepper;
use crate::stats::{estimate, variance_estimate, Estimate};

/// Largest number of quadrature nodes a tiny instance may use.
pub const NODE_BUDGET: u64 = 100_000_000;
pub const DEFAULT_ORDER: usize = 12;
/// Largest lattice the quadrature oracle accepts.
pub const MAX_SITES: usize = 5;
pub const MAX_STEPS: usize = 3;

/// Nodes and weights for `E f(Z)`, `Z ~ N(0, 1)`: `sum_i w_i f(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss–Hermite rule of order `q` for the standard normal law, by Newton
/// iteration on the normalized Hermite recurrence.
pub fn gauss_hermite(q: usize) -> GaussHermite {
    assert!(q >= 1, "quadrature order must be positive");
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let n = q as f64;
    let mut x = vec![0.0; q];
    let mut w = vec![0.0; q];
    let mut z: f64 = 0.0;
    for i in 0..q.div_ceil(2) {
        z = match i {
            0 => (2.0 * n + 1.0).sqrt() - 1.85575 * (2.0 * n + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * n.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (pim4, 0.0);
            for j in 0..q {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n).sqrt() * p2;
            let step = p1 / pp;
            z -= step;
            if step.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[q - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[q - 1 - i] = w[i];
    }
    // Physicists' rule for e^{-x^2} mapped to the standard normal.
    let root2 = std::f64::consts::SQRT_2;
    let norm = std::f64::consts::PI.sqrt();
    GaussHermite {
        nodes: x.iter().rev().map(|v| v * root2).collect(),
        weights: w.iter().rev().map(|v| v / norm).collect(),
    }
}

/// Expectations the quadrature oracle can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "observable", content = "theta")]
pub enum Observable {
    MeanH,
    VarH,
    MeanAbsEndpoint,
    MeanEndpointSq,
    MeanQuenchedMeanSq,
    FreeEnergyShift(f64),
}

/// A lattice small enough for exhaustive quadrature over all its Gaussian
/// inputs: `n_steps * n_sites` noise cells (when the noise is on) and
/// `n_sites - 1` boundary increments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TinyInstance {
    pub grid: GridSpec,
    pub order: usize,
    pub noise: NoiseMode,
}

impl TinyInstance {
    pub fn new(grid: GridSpec, order: usize, noise: NoiseMode) -> Result<Self> {
        if grid.n_sites > MAX_SITES || grid.n_steps > MAX_STEPS {
            return Err(SimError::InvalidGrid(format!(
                "tiny instances allow at most {MAX_SITES} sites and {MAX_STEPS} steps, got {} and {}",
                grid.n_sites, grid.n_steps
            )));
        }
        if order == 0 {
            return Err(SimError::InvalidParams("quadrature order must be positive".into()));
        }
        let instance = Self { grid, order, noise };
        let nodes = instance.nodes();
        if nodes > NODE_BUDGET {
            return Err(SimError::TooLarge { nodes: nodes as f64, budget: NODE_BUDGET as f64 });
        }
        Ok(instance)
    }

    pub fn noise_dims(&self) -> usize {
        match self.noise {
            NoiseMode::On => self.grid.n_steps * self.grid.n_sites,
            NoiseMode::Off => 0,
        }
    }

    pub fn dims(&self) -> usize {
        self.noise_dims() + self.grid.n_sites - 1
    }

    /// `order^dims`, saturating.
    pub fn nodes(&self) -> u64 {
        (0..self.dims()).fold(1u64, |acc, _| acc.saturating_mul(self.order as u64))
    }

    pub fn ensemble(&self, replicas: usize, master_seed: u64) -> EnsembleSpec {
        let mut spec = EnsembleSpec::new(self.grid, replicas, master_seed).with_noise(self.noise);
        spec.guard_margin = 0;
        spec
    }
}

/// Raw integrands accumulated at every node.
#[derive(Debug, Clone, Default)]
struct Moments {
    h: CompensatedSum,
    h2: CompensatedSum,
    abs1: CompensatedSum,
    second: CompensatedSum,
    mean_sq: CompensatedSum,
    shifts: Vec<CompensatedSum>,
}

impl Moments {
    fn merge(&mut self, other: &Moments) {
        self.h.add(other.h.value());
        self.h2.add(other.h2.value());
        self.abs1.add(other.abs1.value());
        self.second.add(other.second.value());
        self.mean_sq.add(other.mean_sq.value());
        for (a, b) in self.shifts.iter_mut().zip(&other.shifts) {
            a.add(b.value());
        }
    }
}

/// Evaluates one node block: all nodes whose first coordinate is `lead`.
fn integrate_block(instance: &TinyInstance, rule: &GaussHermite, thetas: &[f64], lead: usize) -> Result<Moments> {
    let grid = instance.grid;
    let dims = instance.dims();
    let noise_dims = instance.noise_dims();
    let n = grid.n_sites;
    let origin = grid.origin();
    let sqrt_dx = grid.dx.sqrt();
    let xs = grid.xs();
    let mut stepper = Stepper::new(&grid);
    let mut idx = vec![0usize; dims];
    idx[0] = lead;
    let mut eta = vec![0.0; noise_dims];
    let mut w = vec![0.0; n];
    let mut row = vec![0.0; n];
    let mut logs = vec![0.0; n];
    let mut out = Moments { shifts: vec![CompensatedSum::new(); thetas.len()], ..Default::default() };
    let silent = NoiseHandle::silent(n);
    loop {
        let mut weight = 1.0;
        for (d, &k) in idx.iter().enumerate() {
            weight *= rule.weights[k];
            if d < noise_dims {
                eta[d] = rule.nodes[k];
            }
        }
        // Boundary increments run outward from the origin, right side first,
        // exactly as the sampler draws them.
        let mut b = noise_dims;
        let mut acc = 0.0;
        for value in w.iter_mut().skip(origin + 1) {
            acc += sqrt_dx * rule.nodes[idx[b]];
            *value = acc;
            b += 1;
        }
        acc = 0.0;
        for i in (0..origin).rev() {
            acc += sqrt_dx * rule.nodes[idx[b]];
            w[i] = acc;
            b += 1;
        }
        w[origin] = 0.0;

        let offset = if noise_dims > 0 {
            stepper.green_row_into(&InjectedNoise { values: &eta, n_sites: n }, &mut row)?
        } else {
            stepper.green_row_into(&silent, &mut row)?
        };
        for j in 0..n {
            logs[j] = row[j].ln() + w[j];
        }
        let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let (mut m1, mut a1, mut m2) = (0.0, 0.0, 0.0);
        for j in 0..n {
            let q = (logs[j] - peak).exp();
            total += q;
            m1 += q * xs[j];
            a1 += q * xs[j].abs();
            m2 += q * xs[j] * xs[j];
        }
        let h = peak + total.ln() + offset + grid.dx.ln();
        let (m1, a1, m2) = (m1 / total, a1 / total, m2 / total);
        out.h.add(weight * h);
        out.h2.add(weight * h * h);
        out.abs1.add(weight * a1);
        out.second.add(weight * m2);
        out.mean_sq.add(weight * m1 * m1);
        for (k, &theta) in thetas.iter().enumerate() {
            let tilted: f64 = (0..n).map(|j| (logs[j] - peak + theta * xs[j]).exp()).sum();
            out.shifts[k].add(weight * (tilted / total).ln());
        }

        // Odometer over every coordinate except the leading one.
        let mut d = dims;
        loop {
            if d == 1 {
                return Ok(out);
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < rule.nodes.len() {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Quadrature values of `observables` on `instance`, split into
/// `order` blocks evaluated on `workers` threads and summed in block order.
pub fn quadrature_expectations(instance: &TinyInstance, observables: &[Observable], workers: usize) -> Result<Vec<f64>> {
    let nodes = instance.nodes();
    if nodes > NODE_BUDGET {
        return Err(SimError::TooLarge { nodes: nodes as f64, budget: NODE_BUDGET as f64 });
    }
    let rule = gauss_hermite(instance.order);
    let thetas: Vec<f64> = observables
        .iter()
        .filter_map(|o| if let Observable::FreeEnergyShift(t) = o { Some(*t) } else { None })
        .collect();
    let blocks: Vec<usize> = (0..instance.order).collect();
    let run = |lead: &usize| integrate_block(instance, &rule, &thetas, *lead);
    let parts: Vec<Result<Moments>> = if workers <= 1 {
        blocks.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| SimError::InvalidParams(format!("thread pool: {e}")))?;
        pool.install(|| blocks.par_iter().map(run).collect())
    };
    let mut total = Moments { shifts: vec![CompensatedSum::new(); thetas.len()], ..Default::default() };
    for part in parts {
        total.merge(&part?);
    }
    let mut shift_iter = total.shifts.iter();
    Ok(observables
        .iter()
        .map(|o| match o {
            Observable::MeanH => total.h.value(),
            Observable::VarH => total.h2.value() - total.h.value().powi(2),
            Observable::MeanAbsEndpoint => total.abs1.value(),
            Observable::MeanEndpointSq => total.second.value(),
            Observable::MeanQuenchedMeanSq => total.mean_sq.value(),
            Observable::FreeEnergyShift(_) => shift_iter.next().expect("one sum per shift").value(),
        })
        .collect())
}

pub fn quadrature_expectation(instance: &TinyInstance, observable: Observable) -> Result<f64> {
    Ok(quadrature_expectations(instance, &[observable], 1)?[0])
}

/// Monte Carlo estimates of the drift-free observables on the same lattice.
pub fn monte_carlo_expectations(
    instance: &TinyInstance,
    observables: &[Observable],
    replicas: usize,
    master_seed: u64,
    workers: usize,
) -> Result<Vec<Estimate>> {
    let spec = instance.ensemble(replicas, master_seed).with_workers(workers);
    let samples = origin_samples(&spec)?;
    let key = spec.bootstrap_key();
    let col = |f: &dyn Fn(&crate::identities::OriginSample) -> f64| samples.iter().map(f).collect::<Vec<f64>>();
    observables
        .iter()
        .map(|o| match o {
            Observable::MeanH => Ok(estimate(&col(&|s| s.h), key)),
            Observable::VarH => Ok(variance_estimate(&col(&|s| s.h), key)),
            Observable::MeanAbsEndpoint => Ok(estimate(&col(&|s| s.abs_mean), key)),
            Observable::MeanEndpointSq => Ok(estimate(&col(&|s| s.second), key)),
            Observable::MeanQuenchedMeanSq => Ok(estimate(&col(&|s| s.mean * s.mean), key)),
            Observable::FreeEnergyShift(_) => {
                Err(SimError::InvalidParams("drift shifts are checked by the free-energy experiment".into()))
            }
        })
        .collect()
}

pub fn observable_name(o: &Observable) -> &'static str {
    match o {
        Observable::MeanH => "mean_h",
        Observable::VarH => "var_h",
        Observable::MeanAbsEndpoint => "mean_abs_endpoint",
        Observable::MeanEndpointSq => "mean_endpoint_sq",
        Observable::MeanQuenchedMeanSq => "mean_quenched_mean_sq",
        Observable::FreeEnergyShift(_) => "free_energy_shift",
    }
}

/// Monte Carlo against quadrature on `instance`, one report per observable;
/// each passes when they agree within `sigmas` Monte Carlo standard errors.
pub fn oracle_selftest(
    instance: &TinyInstance,
    observables: &[Observable],
    replicas: usize,
    master_seed: u64,
    workers: usize,
    sigmas: f64,
) -> Result<Vec<IdentityReport>> {
    let exact = quadrature_expectations(instance, observables, workers)?;
    let mc = monte_carlo_expectations(instance, observables, replicas, master_seed, workers)?;
    let spec = instance.ensemble(replicas, master_seed);
    Ok(observables
        .iter()
        .zip(exact.iter().zip(mc))
        .map(|(o, (&q, m))| {
            IdentityReport::independent(
                &format!("oracle_{}", observable_name(o)),
                CheckMode::Equality,
                m,
                Estimate::exact(q),
                0.0,
                ConfigSnapshot::from(&spec),
            )
            .judged(sigmas, 0.0)
            .with_origin(Origin::Oracle)
            .param("order", instance.order as f64)
            .param("nodes", instance.nodes() as f64)
        })
        .collect())
}

/// The deterministic endpoint density for `W = 0` without noise: the
/// lattice heat kernel at time `t`.
pub fn zero_noise_kernel(grid: &GridSpec) -> Result<EndpointDensity> {
    let row = Stepper::new(grid).green_row(&NoiseHandle::silent(grid.n_sites))?;
    endpoint_density(&row, &BoundaryPath::zero(grid), 0.0)
}

/// Observables whose only randomness is the initial profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "observable")]
pub enum ZeroNoiseObservable {
    /// `Cov[H(t,z), W(x)]`.
    CovHwLhs { z: f64, x: f64 },
    /// `E int p 1{z+y>0} min(x, z+y) dy - min(x, z)`.
    CovHwRhs { z: f64, x: f64 },
    /// Difference of the two sides, resampled jointly.
    CovHwGap { z: f64, x: f64 },
    /// `E int y p(t, y) dy`.
    QuenchedMean,
    /// `E int p(t, y) dy`.
    Normalization,
}

/// Evaluates `observable` with the noise switched off, so the kernel is
/// computed once and the Monte Carlo runs over `spec.replicas` Brownian
/// profiles only.
pub fn zero_noise_oracle(spec: &EnsembleSpec, observable: ZeroNoiseObservable) -> Result<Estimate> {
    let spec = spec.with_noise(NoiseMode::Off).with_initial(InitialData::Brownian);
    match observable {
        ZeroNoiseObservable::CovHwLhs { z, x } => Ok(check_cov_h_w(&spec, z, x)?.lhs),
        ZeroNoiseObservable::CovHwRhs { z, x } => Ok(check_cov_h_w(&spec, z, x)?.rhs),
        ZeroNoiseObservable::CovHwGap { z, x } => {
            let r = check_cov_h_w(&spec, z, x)?;
            let se = r.combined_sigma;
            Ok(Estimate {
                mean: r.discrepancy,
                stderr: se,
                ci_low: r.discrepancy - 2.576 * se,
                ci_high: r.discrepancy + 2.576 * se,
                n: spec.replicas,
            })
        }
        ZeroNoiseObservable::QuenchedMean => {
            let means: Vec<f64> = origin_samples(&spec)?.iter().map(|s| s.mean).collect();
            Ok(estimate(&means, spec.bootstrap_key()))
        }
        ZeroNoiseObservable::Normalization => {
            let row = Stepper::new(&spec.grid).green_row(&NoiseHandle::silent(spec.grid.n_sites))?;
            let masses: Vec<f64> = spec.run(|r| Ok(endpoint_density(&row, &spec.boundary(r), 0.0)?.total_mass()))?;
            Ok(estimate(&masses, spec.bootstrap_key()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(steps: f64, order: usize, noise: NoiseMode) -> TinyInstance {
        TinyInstance::new(GridSpec::new(1.0, Some(0.5), 1.0, 0.5 * steps).unwrap(), order, noise).unwrap()
    }

    #[test]
    fn hermite_rule_integrates_polynomials() {
        for q in [1usize, 2, 5, 12, 20] {
            let r = gauss_hermite(q);
            let m = |k: i32| r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(k)).sum::<f64>();
            assert!((m(0) - 1.0).abs() < 1e-13, "q={q}");
            assert!(m(1).abs() < 1e-13);
            if q >= 2 {
                assert!((m(2) - 1.0).abs() < 1e-12, "q={q}");
            }
            if q >= 3 {
                assert!((m(4) - 3.0).abs() < 1e-11, "q={q}");
            }
            if q >= 4 {
                assert!((m(6) - 15.0).abs() < 1e-10, "q={q}");
            }
        }
    }

    #[test]
    fn tiny_instance_limits() {
        let g = GridSpec::new(1.0, Some(0.5), 1.0, 1.0).unwrap();
        assert_eq!((g.n_sites, g.n_steps), (3, 2));
        let ok = TinyInstance::new(g, 10, NoiseMode::On).unwrap();
        assert_eq!((ok.dims(), ok.nodes()), (8, 100_000_000));
        assert!(matches!(TinyInstance::new(g, 12, NoiseMode::On), Err(SimError::TooLarge { .. })));
        let big = GridSpec::new(1.0, Some(0.5), 3.0, 1.0).unwrap();
        assert!(matches!(TinyInstance::new(big, 2, NoiseMode::On), Err(SimError::InvalidGrid(_))));
    }

    #[test]
    fn silent_quadrature_has_symmetric_endpoint() {
        let inst = tiny(1.0, 16, NoiseMode::Off);
        let v = quadrature_expectations(&inst, &[Observable::MeanEndpointSq, Observable::FreeEnergyShift(0.0)], 1).unwrap();
        assert!(v[0] > 0.0 && v[0] < 1.0);
        assert!(v[1].abs() < 1e-15);
    }

    #[test]
    fn quadrature_converges_in_order() {
        let obs = [Observable::MeanH, Observable::VarH, Observable::MeanEndpointSq];
        let a = quadrature_expectations(&tiny(1.0, 12, NoiseMode::On), &obs, 1).unwrap();
        let b = quadrature_expectations(&tiny(1.0, 16, NoiseMode::On), &obs, 1).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn single_node_quadrature_matches_the_silent_kernel() {
        // Order 1 puts the only node at W = 0.
        let inst = tiny(2.0, 1, NoiseMode::Off);
        let q = quadrature_expectations(&inst, &[Observable::MeanEndpointSq, Observable::MeanAbsEndpoint], 1).unwrap();
        let p = zero_noise_kernel(&inst.grid).unwrap();
        assert!((q[0] - p.variance()).abs() < 1e-12, "{} vs {}", q[0], p.variance());
        assert!((q[1] - p.expect(f64::abs)).abs() < 1e-12);
    }

    #[test]
    fn silent_kernel_moments() {
        let g = GridSpec::new(0.05, None, 10.0, 1.0).unwrap();
        let p = zero_noise_kernel(&g).unwrap();
        assert!((p.total_mass() - 1.0).abs() < 1e-12);
        assert!(p.mean().abs() < 1e-12);
        // Each lattice step adds exactly dt to the variance away from the walls.
        assert!((p.variance() - 1.0).abs() < 1e-10, "{}", p.variance());
    }

    #[test]
    fn zero_noise_normalization_is_one() {
        let g = GridSpec::new(0.1, None, 6.0, 0.5).unwrap();
        let e = zero_noise_oracle(&EnsembleSpec::new(g, 50, 1), ZeroNoiseObservable::Normalization).unwrap();
        assert!((e.mean - 1.0).abs() < 1e-12);
    }
}
