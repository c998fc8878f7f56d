//! Lattice stochastic heat equation in log-offset representation.
//!
//! One time step is `Z <- A (Z * w_n)` with `w_{n,i} = exp(sigma eta_{n,i} -
//! sigma^2 / 2)`, `sigma = sqrt(dt / dx)` and `A = I + (dt / 2) L_h`, where
//! `L_h` is the second difference with reflecting end rows. `A` is symmetric
//! and both row- and column-stochastic, so the row `e_0^T S_T ... S_1` of the
//! solution operator is obtained by running the same two factors backwards
//! in time, transposed, on a point mass at the origin.

use crate::boundary::BoundaryPath;
use crate::error::{Result, SimError};
use crate::grid::GridSpec;
use crate::numeric::logsumexp;
use crate::rng::NoiseField;

const LN_2: f64 = std::f64::consts::LN_2;
const RENORM_HIGH: f64 = 18446744073709551616.0; // 2^64
const RENORM_LOW: f64 = 1.0 / RENORM_HIGH;

/// Allowed normalized propagator mass near the domain edge.
pub const LEAK_LIMIT: f64 = 1e-4;
pub const DEFAULT_GUARD_MARGIN: usize = 5;

/// `Z(x_i) = weights[i] * exp(log_offset)` at time `time_index * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightField {
    pub weights: Vec<f64>,
    pub log_offset: f64,
    pub grid: GridSpec,
    pub time_index: usize,
}

impl HeightField {
    /// `Z(0, x) = exp(f(x))`.
    pub fn from_log(grid: &GridSpec, f: &[f64]) -> Self {
        assert_eq!(f.len(), grid.n_sites);
        let m = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            weights: f.iter().map(|v| (v - m).exp()).collect(),
            log_offset: m,
            grid: *grid,
            time_index: 0,
        }
    }

    /// Unit mass at the origin: `1 / dx` on the origin site.
    pub fn delta(grid: &GridSpec) -> Self {
        let mut weights = vec![0.0; grid.n_sites];
        weights[grid.origin()] = 1.0;
        Self { weights, log_offset: -grid.dx.ln(), grid: *grid, time_index: 0 }
    }

    pub fn h(&self, i: usize) -> f64 {
        self.weights[i].ln() + self.log_offset
    }

    pub fn h_origin(&self) -> f64 {
        self.h(self.grid.origin())
    }

    pub fn heights(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.ln() + self.log_offset).collect()
    }

    /// `h(t, x) - W(x)`, the height measured relative to the initial data.
    pub fn relative_heights(&self, init: &BoundaryPath) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&init.values)
            .map(|(w, w0)| w.ln() + self.log_offset - w0)
            .collect()
    }

    /// `dx * sum_i Z(x_i)`.
    pub fn mass(&self) -> f64 {
        self.grid.dx * self.weights.iter().sum::<f64>() * self.log_offset.exp()
    }

    pub fn time(&self) -> f64 {
        self.time_index as f64 * self.grid.dt
    }
}

/// `Z_t(0, y_j)` up to the factor `exp(log_offset)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatorRow {
    pub weights: Vec<f64>,
    pub log_offset: f64,
    pub origin: usize,
    pub t_final: f64,
    pub grid: GridSpec,
}

impl PropagatorRow {
    /// `log Z_t(0, y_j)`, `-inf` where the lattice kernel has not arrived.
    pub fn log_weights(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.ln() + self.log_offset).collect()
    }

    /// `log(dx * sum_j Z_t(0, y_j) exp(f_j))`: the origin value at time `t`
    /// of the solution started from `exp(f)`.
    pub fn log_pairing(&self, f: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(f)
            .map(|(w, fj)| if *w > 0.0 { w.ln() + fj } else { f64::NEG_INFINITY })
            .collect();
        logsumexp(&terms) + self.log_offset + self.grid.dx.ln()
    }

    pub fn mass(&self) -> f64 {
        self.grid.dx * self.weights.iter().sum::<f64>() * self.log_offset.exp()
    }
}

/// Reusable scratch for the time-stepping kernels.
#[derive(Debug, Clone)]
pub struct Stepper {
    grid: GridSpec,
    eta: Vec<f64>,
}

impl Stepper {
    pub fn new(grid: &GridSpec) -> Self {
        Self { grid: *grid, eta: vec![0.0; grid.n_sites] }
    }

    #[inline]
    fn multiply(&mut self, weights: &mut [f64], noise: &impl NoiseField, step: usize) {
        if noise.is_silent() {
            return;
        }
        noise.fill_row(step, &mut self.eta);
        let sigma = self.grid.sigma();
        let drift = -0.5 * sigma * sigma;
        for (w, z) in weights.iter_mut().zip(&self.eta) {
            *w *= (sigma * z + drift).exp();
        }
    }

    /// Forward step `n = field.time_index`: multiply, then diffuse.
    pub fn advance(&mut self, field: &mut HeightField, noise: &impl NoiseField) -> Result<()> {
        let step = field.time_index;
        self.multiply(&mut field.weights, noise, step);
        let peak = diffuse(&mut field.weights, 0.5 * self.grid.courant());
        field.log_offset += renormalize(&mut field.weights, peak, step)?;
        field.time_index += 1;
        Ok(())
    }

    /// Transposed step `n`: diffuse, then multiply.
    fn retreat(&mut self, row: &mut [f64], noise: &impl NoiseField, step: usize) -> Result<f64> {
        diffuse(row, 0.5 * self.grid.courant());
        self.multiply(row, noise, step);
        let peak = row.iter().copied().fold(0.0, f64::max);
        renormalize(row, peak, step)
    }

    pub fn evolve_log(&mut self, f: &[f64], noise: &impl NoiseField) -> Result<HeightField> {
        let mut field = HeightField::from_log(&self.grid, f);
        for _ in 0..self.grid.n_steps {
            self.advance(&mut field, noise)?;
        }
        Ok(field)
    }

    pub fn green_row(&mut self, noise: &impl NoiseField) -> Result<PropagatorRow> {
        let grid = self.grid;
        let mut weights = vec![0.0; grid.n_sites];
        let log_offset = self.green_row_into(noise, &mut weights)?;
        Ok(PropagatorRow { weights, log_offset, origin: grid.origin(), t_final: grid.t_final, grid })
    }

    /// [`Self::green_row`] into a caller-owned buffer; returns the log offset.
    pub fn green_row_into(&mut self, noise: &impl NoiseField, weights: &mut [f64]) -> Result<f64> {
        let grid = self.grid;
        weights.fill(0.0);
        weights[grid.origin()] = 1.0;
        let mut log_offset = -grid.dx.ln();
        for step in (0..grid.n_steps).rev() {
            log_offset += self.retreat(weights, noise, step)?;
        }
        Ok(log_offset)
    }
}

/// In place `w <- w + half_r * L_h w` with reflecting ends; returns the new
/// maximum.
#[inline]
fn diffuse(w: &mut [f64], half_r: f64) -> f64 {
    let n = w.len();
    if n < 2 {
        return w.first().copied().unwrap_or(0.0);
    }
    let mut prev = w[0];
    let mut cur = w[0];
    w[0] = cur + half_r * (w[1] - cur);
    let mut peak = w[0];
    for i in 1..n - 1 {
        cur = w[i];
        let next = w[i + 1];
        let v = cur + half_r * (prev - 2.0 * cur + next);
        w[i] = v;
        peak = peak.max(v);
        prev = cur;
    }
    cur = w[n - 1];
    w[n - 1] = cur + half_r * (prev - cur);
    peak.max(w[n - 1])
}

/// Rescales by a power of two when the peak leaves `[2^-64, 2^64]`; returns
/// the log of the factor removed.
#[inline]
fn renormalize(w: &mut [f64], peak: f64, step: usize) -> Result<f64> {
    if !(peak.is_finite() && peak > 0.0) {
        return Err(SimError::Overflow { step });
    }
    if (RENORM_LOW..=RENORM_HIGH).contains(&peak) {
        return Ok(0.0);
    }
    let e = peak.log2().floor() as i32;
    let scale = 2f64.powi(-e);
    if !(scale.is_finite() && scale > 0.0) {
        return Err(SimError::Overflow { step });
    }
    for v in w.iter_mut() {
        *v *= scale;
    }
    Ok(e as f64 * LN_2)
}

/// One forward step from `field.time_index`.
pub fn step(field: &HeightField, noise: &impl NoiseField) -> Result<HeightField> {
    let mut next = field.clone();
    Stepper::new(&field.grid).advance(&mut next, noise)?;
    Ok(next)
}

/// Solves from `Z(0, x) = exp(init(x))` up to `grid.t_final`.
pub fn evolve(init: &BoundaryPath, noise: &impl NoiseField, grid: &GridSpec) -> Result<HeightField> {
    Stepper::new(grid).evolve_log(&init.values, noise)
}

/// `Z_t(0, .)` by the transposed reverse-time recursion.
pub fn green_row(noise: &impl NoiseField, grid: &GridSpec) -> Result<PropagatorRow> {
    Stepper::new(grid).green_row(noise)
}

/// Relative gap between the forward origin value from `exp(f)` and the
/// pairing of the green row with `exp(f)`.
pub fn duality_check(noise: &impl NoiseField, grid: &GridSpec, f: &BoundaryPath) -> Result<f64> {
    let forward = evolve(f, noise, grid)?.h_origin();
    let paired = green_row(noise, grid)?.log_pairing(&f.values);
    Ok((paired - forward).exp_m1().abs())
}

/// Fraction of the total weight within `margin` sites of either edge.
pub fn edge_mass_fraction(weights: &[f64], margin: usize) -> f64 {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    let m = margin.min(n / 2);
    let edge: f64 = weights[..m].iter().sum::<f64>() + weights[n - m..].iter().sum::<f64>();
    edge / total
}

/// Edge mass of the row; a margin of 0 disables the guard (for lattices so
/// small that every site is near an edge).
pub fn boundary_mass_guard(row: &PropagatorRow, margin: usize) -> f64 {
    if margin == 0 {
        return 0.0;
    }
    edge_mass_fraction(&row.weights, margin)
}

/// `Err(BoundaryLeak)` when the guard exceeds [`LEAK_LIMIT`].
pub fn ensure_contained(row: &PropagatorRow, margin: usize) -> Result<()> {
    let mass = boundary_mass_guard(row, margin);
    if mass > LEAK_LIMIT {
        Err(SimError::BoundaryLeak { mass, margin, limit: LEAK_LIMIT })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::sample_boundary;
    use crate::rng::{make_key, NoiseHandle, NoiseMode, Purpose};

    fn noisy(grid: &GridSpec, seed: u64) -> NoiseHandle {
        NoiseHandle::new(make_key(seed, 0, Purpose::Noise), grid.n_sites, NoiseMode::On)
    }

    #[test]
    fn constant_field_is_preserved_without_noise() {
        let g = GridSpec::new(0.1, None, 3.0, 0.5).unwrap();
        let f = HeightField::from_log(&g, &vec![0.3; g.n_sites]);
        let next = step(&f, &NoiseHandle::silent(g.n_sites)).unwrap();
        assert!(next.heights().iter().all(|h| (h - 0.3).abs() < 1e-14));
        assert_eq!(next.time_index, 1);
    }

    #[test]
    fn delta_mass_is_conserved() {
        let g = GridSpec::new(0.05, None, 2.0, 1.0).unwrap();
        let next = step(&HeightField::delta(&g), &NoiseHandle::silent(g.n_sites)).unwrap();
        assert!((next.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights_have_unit_mean() {
        let g = GridSpec::new(0.05, None, 10.0, 1.0).unwrap();
        let sigma = g.sigma();
        let mut sum = 0.0;
        let mut count = 0usize;
        for step in 0..250 {
            let h = noisy(&g, 11);
            let mut row = vec![0.0; g.n_sites];
            h.fill_row(step, &mut row);
            for z in row {
                sum += (sigma * z - 0.5 * sigma * sigma).exp();
                count += 1;
            }
        }
        assert!(count >= 100_000);
        assert!((sum / count as f64 - 1.0).abs() < 0.01);
    }

    #[test]
    fn flat_data_stays_flat_without_noise() {
        let g = GridSpec::new(0.1, None, 3.0, 1.0).unwrap();
        let field = evolve(&BoundaryPath::zero(&g), &NoiseHandle::silent(g.n_sites), &g).unwrap();
        assert!(field.heights().iter().all(|h| h.abs() < 1e-10));
    }

    #[test]
    fn silent_green_row_is_normalized() {
        let g = GridSpec::new(0.05, None, 10.0, 1.0).unwrap();
        let row = green_row(&NoiseHandle::silent(g.n_sites), &g).unwrap();
        assert!((row.mass() - 1.0).abs() < 1e-10);
        assert!(boundary_mass_guard(&row, 5) < 1e-10);
    }

    #[test]
    fn duality_holds_for_flat_and_brownian_data() {
        let g = GridSpec::new(0.05, None, 4.0, 0.5).unwrap();
        for seed in 0..3 {
            let noise = noisy(&g, seed);
            assert!(duality_check(&noise, &g, &BoundaryPath::zero(&g)).unwrap() < 1e-10);
            let w = sample_boundary(&g, 0.0, make_key(seed, 0, Purpose::Boundary));
            assert!(duality_check(&noise, &g, &w).unwrap() < 1e-10);
        }
    }

    #[test]
    fn renormalization_keeps_weights_in_window() {
        let g = GridSpec::new(0.1, None, 2.0, 4.0).unwrap();
        let mut f = HeightField::from_log(&g, &vec![0.0; g.n_sites]);
        f.weights.iter_mut().for_each(|w| *w = 1e30);
        let next = step(&f, &noisy(&g, 1)).unwrap();
        let peak = next.weights.iter().copied().fold(0.0, f64::max);
        assert!((RENORM_LOW..=RENORM_HIGH).contains(&peak));
        assert!((next.h_origin() - f.h_origin()).abs() < 1.0);
    }

    #[test]
    fn narrow_domain_leaks() {
        let g = GridSpec::new(0.1, None, 2.0, 4.0).unwrap();
        let row = green_row(&noisy(&g, 2), &g).unwrap();
        assert!(boundary_mass_guard(&row, 5) > LEAK_LIMIT);
        assert!(matches!(ensure_contained(&row, 5), Err(SimError::BoundaryLeak { .. })));
    }

    #[test]
    fn non_finite_peak_overflows() {
        let mut w = vec![f64::INFINITY, 1.0];
        assert_eq!(renormalize(&mut w, f64::INFINITY, 7), Err(SimError::Overflow { step: 7 }));
    }
}
