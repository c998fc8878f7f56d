//! Space/time lattice geometry.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Symmetric lattice `x_i = (i - origin) * dx` on `[-L, L]` with `n_steps` time
/// steps of size `dt` ending exactly at `t_final`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dx: f64,
    pub dt: f64,
    pub half_width: f64,
    pub t_final: f64,
    pub n_sites: usize,
    pub n_steps: usize,
}

impl GridSpec {
    /// Builds a grid. `dt` defaults to `dx^2 / 2`; the half width is rounded up
    /// to a whole number of cells so that `x = 0` is a lattice point, and `dt`
    /// is shrunk slightly so that `n_steps * dt == t_final`.
    pub fn new(dx: f64, dt: Option<f64>, half_width: f64, t_final: f64) -> Result<Self> {
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(SimError::InvalidGrid(format!("dx must be positive, got {dx}")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(SimError::InvalidGrid(format!(
                "half width L must be positive, got {half_width}"
            )));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(SimError::InvalidGrid(format!(
                "t_final must be positive, got {t_final}"
            )));
        }
        let requested_dt = dt.unwrap_or(0.5 * dx * dx);
        if !(requested_dt > 0.0) {
            return Err(SimError::InvalidGrid(format!("dt must be positive, got {requested_dt}")));
        }
        if requested_dt > dx * dx {
            return Err(SimError::Stability { dt: requested_dt, dx });
        }
        let cells = (half_width / dx - 1e-9).ceil().max(1.0) as usize;
        let mut n_steps = ((t_final / requested_dt).round() as usize).max(1);
        if t_final / n_steps as f64 > dx * dx {
            n_steps += 1;
        }
        Ok(Self {
            dx,
            dt: t_final / n_steps as f64,
            half_width: cells as f64 * dx,
            t_final,
            n_sites: 2 * cells + 1,
            n_steps,
        })
    }

    /// Same spatial lattice and time step, different horizon.
    pub fn with_t_final(&self, t_final: f64) -> Result<Self> {
        Self::new(self.dx, Some(self.dt), self.half_width, t_final)
    }

    pub fn origin(&self) -> usize {
        (self.n_sites - 1) / 2
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        (i as f64 - self.origin() as f64) * self.dx
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n_sites).map(|i| self.x(i)).collect()
    }

    /// Index of the lattice point nearest to `x`, or `None` outside `[-L, L]`.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let k = (x / self.dx).round();
        let i = self.origin() as f64 + k;
        if i < 0.0 || i > (self.n_sites - 1) as f64 {
            None
        } else {
            Some(i as usize)
        }
    }

    /// Noise amplitude of one cell: `sqrt(dt / dx)`.
    pub fn sigma(&self) -> f64 {
        (self.dt / self.dx).sqrt()
    }

    /// Diffusion number `dt / dx^2`; at most 1 by construction.
    pub fn courant(&self) -> f64 {
        self.dt / (self.dx * self.dx)
    }
}
