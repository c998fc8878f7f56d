//! Quenched and annealed endpoint laws of the directed polymer.

use serde::{Deserialize, Serialize};

use crate::boundary::BoundaryPath;
use crate::error::{Result, SimError};
use crate::grid::GridSpec;
use crate::numeric::{logsumexp, CompensatedSum};
use crate::rng::{aux, Purpose, RngKey};
use crate::she::{edge_mass_fraction, PropagatorRow, LEAK_LIMIT};

/// Normalized endpoint density on the lattice: `dx * sum(probs) == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointDensity {
    pub probs: Vec<f64>,
    pub grid: GridSpec,
    pub tilt: f64,
    pub start: f64,
}

/// Normalizes `exp(log_weights)` into a density.
fn normalize(grid: &GridSpec, log_weights: &[f64]) -> Result<Vec<f64>> {
    let z = logsumexp(log_weights);
    if !z.is_finite() {
        return Err(SimError::DegenerateDensity);
    }
    let shift = z + grid.dx.ln();
    Ok(log_weights.iter().map(|v| (v - shift).exp()).collect())
}

/// `p(y) ∝ Z_t(0, y) exp(W(y) + theta y)`.
pub fn endpoint_density(row: &PropagatorRow, w: &BoundaryPath, theta: f64) -> Result<EndpointDensity> {
    let grid = row.grid;
    let logs: Vec<f64> = row
        .log_weights()
        .iter()
        .zip(&w.values)
        .enumerate()
        .map(|(j, (lz, wv))| lz + wv + theta * grid.x(j))
        .collect();
    Ok(EndpointDensity { probs: normalize(&grid, &logs)?, grid, tilt: w.drift + theta, start: 0.0 })
}

/// Exponential tilt `p(y) e^{theta y}`, renormalized.
pub fn tilt_density(p: &EndpointDensity, theta: f64) -> EndpointDensity {
    let grid = p.grid;
    let logs: Vec<f64> = p
        .probs
        .iter()
        .enumerate()
        .map(|(j, q)| if *q > 0.0 { q.ln() + theta * grid.x(j) } else { f64::NEG_INFINITY })
        .collect();
    let probs = normalize(&grid, &logs).expect("a normalized density has positive mass");
    EndpointDensity { probs, grid, tilt: p.tilt + theta, start: p.start }
}

/// `dx * sum_j y_j^k p_j`, or with `|y_j|^k` when `absolute`.
pub fn quenched_moment(p: &EndpointDensity, k: i32, absolute: bool) -> f64 {
    p.expect(|y| if absolute { y.abs().powi(k) } else { y.powi(k) })
}

impl EndpointDensity {
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        let mut s = CompensatedSum::new();
        for (j, q) in self.probs.iter().enumerate() {
            s.add(q * f(self.grid.x(j)));
        }
        self.grid.dx * s.value()
    }

    pub fn mean(&self) -> f64 {
        quenched_moment(self, 1, false)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.expect(|y| (y - m) * (y - m))
    }

    /// Mass on lattice points strictly above `level`.
    pub fn mass_above(&self, level: f64) -> f64 {
        self.expect(|y| if y > level { 1.0 } else { 0.0 })
    }

    pub fn total_mass(&self) -> f64 {
        self.expect(|_| 1.0)
    }

    /// `Err(BoundaryLeak)` when the density puts more than [`LEAK_LIMIT`] of
    /// its mass within `margin` sites of the domain edge. A margin of 0
    /// disables the check.
    pub fn ensure_contained(&self, margin: usize) -> Result<()> {
        if margin == 0 {
            return Ok(());
        }
        let mass = edge_mass_fraction(&self.probs, margin);
        if mass > LEAK_LIMIT {
            Err(SimError::BoundaryLeak { mass, margin, limit: LEAK_LIMIT })
        } else {
            Ok(())
        }
    }

    /// Cumulative masses, one per cell, ending at 1.
    fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.probs
            .iter()
            .map(|q| {
                acc += q * self.grid.dx;
                acc
            })
            .collect()
    }

    /// Reads the density as piecewise constant on cells `[y_j - dx/2, y_j + dx/2]`
    /// and inverts its CDF at `u`.
    pub fn quantile(&self, cumulative: &[f64], u: f64) -> f64 {
        let total = *cumulative.last().unwrap_or(&1.0);
        let target = u * total;
        let j = cumulative.partition_point(|&c| c < target).min(cumulative.len() - 1);
        let below = if j == 0 { 0.0 } else { cumulative[j - 1] };
        let cell = cumulative[j] - below;
        let frac = if cell > 0.0 { ((target - below) / cell).clamp(0.0, 1.0) } else { 0.5 };
        self.grid.x(j) + (frac - 0.5) * self.grid.dx
    }
}

/// One inverse-CDF draw, deterministic per key.
pub fn sample_endpoint(p: &EndpointDensity, key: RngKey) -> f64 {
    sample_endpoints(p, key, 1)[0]
}

pub fn sample_endpoints(p: &EndpointDensity, key: RngKey, count: usize) -> Vec<f64> {
    let cumulative = p.cumulative();
    let mut stream = key.with_purpose(Purpose::Auxiliary).normals(aux::ENDPOINT);
    (0..count).map(|_| p.quantile(&cumulative, stream.next_uniform())).collect()
}

/// Pointwise ensemble mean of quenched densities with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealedDensity {
    pub ys: Vec<f64>,
    pub mean_probs: Vec<f64>,
    pub stderr_probs: Vec<f64>,
    pub replicas: usize,
    pub dx: f64,
}

/// Accumulates densities in the order they are pushed.
#[derive(Debug, Clone)]
pub struct AnnealedAccumulator {
    grid: GridSpec,
    sum: Vec<CompensatedSum>,
    sum_sq: Vec<CompensatedSum>,
    count: usize,
}

impl AnnealedAccumulator {
    pub fn new(grid: &GridSpec) -> Self {
        Self {
            grid: *grid,
            sum: vec![CompensatedSum::new(); grid.n_sites],
            sum_sq: vec![CompensatedSum::new(); grid.n_sites],
            count: 0,
        }
    }

    pub fn push(&mut self, probs: &[f64]) {
        for ((s, s2), q) in self.sum.iter_mut().zip(self.sum_sq.iter_mut()).zip(probs) {
            s.add(*q);
            s2.add(q * q);
        }
        self.count += 1;
    }

    pub fn finish(&self) -> Result<AnnealedDensity> {
        if self.count == 0 {
            return Err(SimError::EmptyEnsemble);
        }
        let m = self.count as f64;
        let mean_probs: Vec<f64> = self.sum.iter().map(|s| s.value() / m).collect();
        let stderr_probs = if self.count < 2 {
            vec![0.0; mean_probs.len()]
        } else {
            self.sum_sq
                .iter()
                .zip(&mean_probs)
                .map(|(s2, mu)| {
                    let var = ((s2.value() - m * mu * mu) / (m - 1.0)).max(0.0);
                    (var / m).sqrt()
                })
                .collect()
        };
        Ok(AnnealedDensity {
            ys: self.grid.xs(),
            mean_probs,
            stderr_probs,
            replicas: self.count,
            dx: self.grid.dx,
        })
    }
}

pub fn annealed_density(densities: &[EndpointDensity]) -> Result<AnnealedDensity> {
    let first = densities.first().ok_or(SimError::EmptyEnsemble)?;
    let mut acc = AnnealedAccumulator::new(&first.grid);
    for d in densities {
        acc.push(&d.probs);
    }
    acc.finish()
}

impl AnnealedDensity {
    pub fn moment(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.dx * self.ys.iter().zip(&self.mean_probs).map(|(y, p)| f(*y) * p).sum::<f64>()
    }

    /// Linear interpolation of the mean density at `y`, zero off the lattice.
    pub fn value_at(&self, y: f64) -> f64 {
        self.interpolate(&self.mean_probs, y)
    }

    /// Standard error at `y`, interpolated like [`Self::value_at`].
    pub fn stderr_at(&self, y: f64) -> f64 {
        self.interpolate(&self.stderr_probs, y)
    }

    fn interpolate(&self, values: &[f64], y: f64) -> f64 {
        let pos = (y - self.ys[0]) / self.dx;
        if pos < 0.0 || pos > (self.ys.len() - 1) as f64 {
            return 0.0;
        }
        let j = (pos.floor() as usize).min(self.ys.len() - 2);
        let frac = pos - j as f64;
        values[j] * (1.0 - frac) + values[j + 1] * frac
    }

    /// `dx * sum |E p(y) - E p(-y)|` over `|y| <= window`, and its pure-noise
    /// level `dx * sum sqrt(2/pi) * sqrt(se(y)^2 + se(-y)^2)`.
    pub fn reflection_distance(&self, window: f64) -> (f64, f64) {
        let n = self.ys.len();
        let mut l1 = 0.0;
        let mut floor = 0.0;
        for j in 0..n {
            if self.ys[j].abs() > window + 1e-12 {
                continue;
            }
            let k = n - 1 - j;
            l1 += (self.mean_probs[j] - self.mean_probs[k]).abs();
            let se = (self.stderr_probs[j].powi(2) + self.stderr_probs[k].powi(2)).sqrt();
            floor += se * (2.0 / std::f64::consts::PI).sqrt();
        }
        (self.dx * l1, self.dx * floor)
    }
}

/// Least-squares line `y = a + b x` with its coefficient of determination and
/// residual sum of squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    pub rss: f64,
    pub points: usize,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> LineFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy > 0.0 { (1.0 - rss / syy).clamp(0.0, 1.0) } else { 1.0 };
    LineFit { intercept, slope, r_squared, rss, points: xs.len() }
}

/// Gaussian-tail diagnostics of an annealed density over `lo <= |y| <= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    /// `log E p` regressed on `y^2`.
    pub quadratic: LineFit,
    /// `log E p` regressed on `|y|`.
    pub linear: LineFit,
    pub aic_quadratic: f64,
    pub aic_linear: f64,
}

pub fn tail_fit(density: &AnnealedDensity, lo: f64, hi: f64) -> TailFit {
    let mut sq = Vec::new();
    let mut ab = Vec::new();
    let mut logs = Vec::new();
    for (y, p) in density.ys.iter().zip(&density.mean_probs) {
        let a = y.abs();
        if a >= lo - 1e-12 && a <= hi + 1e-12 && *p > 0.0 {
            sq.push(y * y);
            ab.push(a);
            logs.push(p.ln());
        }
    }
    let quadratic = fit_line(&sq, &logs);
    let linear = fit_line(&ab, &logs);
    let n = logs.len() as f64;
    let aic = |rss: f64| n * (rss / n).max(f64::MIN_POSITIVE).ln() + 4.0;
    TailFit { quadratic, linear, aic_quadratic: aic(quadratic.rss), aic_linear: aic(linear.rss) }
}
