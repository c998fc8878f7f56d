//! Two-sided Brownian initial data `W`, its drifted version `W + theta x`
//! and the interval-tilted version that carries the drift only on `[0, n]`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::grid::GridSpec;
use crate::rng::{Purpose, RngKey};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalTilt {
    pub slope: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPath {
    pub values: Vec<f64>,
    pub drift: f64,
    pub tilt: Option<IntervalTilt>,
    pub grid: GridSpec,
}

impl BoundaryPath {
    pub fn zero(grid: &GridSpec) -> Self {
        Self { values: vec![0.0; grid.n_sites], drift: 0.0, tilt: None, grid: *grid }
    }

    /// Wraps explicit values; the origin value is not forced to zero.
    pub fn from_values(grid: &GridSpec, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.n_sites);
        Self { values, drift: 0.0, tilt: None, grid: *grid }
    }

    pub fn at(&self, x: f64) -> Option<f64> {
        self.grid.index_of(x).map(|i| self.values[i])
    }

    /// The same path with `theta * x` added everywhere.
    pub fn with_drift(&self, theta: f64) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, w)| w + theta * self.grid.x(i))
            .collect();
        Self { values, drift: self.drift + theta, ..self.clone() }
    }
}

/// Samples `W(x) + theta x` with `W(0) = 0` by independent cumulative sums of
/// `sqrt(dx) N(0,1)` increments running outward from the origin.
pub fn sample_boundary(grid: &GridSpec, theta: f64, key: RngKey) -> BoundaryPath {
    let mut normals = key.with_purpose(Purpose::Boundary).normals(0);
    let origin = grid.origin();
    let step = grid.dx.sqrt();
    let mut values = vec![0.0; grid.n_sites];
    let mut w = 0.0;
    for i in origin + 1..grid.n_sites {
        w += step * normals.next_normal();
        values[i] = w;
    }
    w = 0.0;
    for i in (0..origin).rev() {
        w += step * normals.next_normal();
        values[i] = w;
    }
    let path = BoundaryPath { values, drift: 0.0, tilt: None, grid: *grid };
    if theta == 0.0 {
        path
    } else {
        path.with_drift(theta)
    }
}

/// Adds slope `theta` on `[0, n]` and the constant `theta * n` beyond `n`.
pub fn tilt_path(path: &BoundaryPath, theta: f64, n: f64) -> Result<BoundaryPath> {
    if path.tilt.is_some() {
        return Err(SimError::InvalidParams("path is already tilted".into()));
    }
    if !(n > 0.0) || n > path.grid.half_width + 1e-12 {
        return Err(SimError::OutOfDomain(format!(
            "tilt end n = {n} must lie in (0, {}]",
            path.grid.half_width
        )));
    }
    let grid = path.grid;
    let values = path
        .values
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let x = grid.x(i);
            if x < 0.0 {
                *w
            } else if x <= n {
                w + theta * x
            } else {
                w + theta * n
            }
        })
        .collect();
    Ok(BoundaryPath {
        values,
        drift: path.drift,
        tilt: Some(IntervalTilt { slope: theta, end: n }),
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_key;

    fn grid() -> GridSpec {
        GridSpec::new(0.05, None, 5.0, 1.0).unwrap()
    }

    #[test]
    fn origin_is_pinned() {
        for theta in [0.0, 2.0, -1.3] {
            let w = sample_boundary(&grid(), theta, make_key(1, 4, Purpose::Boundary));
            assert_eq!(w.values[grid().origin()], 0.0);
        }
    }

    #[test]
    fn brownian_variance_and_drift_at_one() {
        let g = grid();
        let i = g.index_of(1.0).unwrap();
        let m = 10_000;
        let plain: Vec<f64> =
            (0..m).map(|r| sample_boundary(&g, 0.0, make_key(9, r, Purpose::Boundary)).values[i]).collect();
        let mean = plain.iter().sum::<f64>() / m as f64;
        let var = plain.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        assert!((var - 1.0).abs() < 0.03, "var {var}");

        let drifted: f64 = (0..m)
            .map(|r| sample_boundary(&g, 2.0, make_key(9, r, Purpose::Boundary)).values[i])
            .sum::<f64>()
            / m as f64;
        assert!((drifted - 2.0).abs() < 0.03, "mean {drifted}");
    }

    #[test]
    fn zero_tilt_is_identity() {
        let w = sample_boundary(&grid(), 0.0, make_key(3, 0, Purpose::Boundary));
        let t = tilt_path(&w, 0.0, 2.0).unwrap();
        assert_eq!(t.values, w.values);
    }

    #[test]
    fn flat_shift_past_tilt_end() {
        let g = grid();
        let t = tilt_path(&BoundaryPath::zero(&g), 1.0, 2.0).unwrap();
        assert!((t.at(3.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((t.at(1.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(t.at(-1.0).unwrap(), 0.0);
    }

    #[test]
    fn tilted_dominates_drifted_below_n() {
        let g = grid();
        for r in 0..20 {
            let w = sample_boundary(&g, 0.0, make_key(5, r, Purpose::Boundary));
            let theta = 0.7;
            let n = 2.0;
            let tilted = tilt_path(&w, theta, n).unwrap();
            let drifted = w.with_drift(theta);
            let min_gap = (0..g.n_sites)
                .filter(|&i| g.x(i) <= n)
                .map(|i| tilted.values[i] - drifted.values[i])
                .fold(f64::INFINITY, f64::min);
            assert!(min_gap >= 0.0);
        }
    }

    #[test]
    fn tilt_end_outside_grid_is_rejected() {
        let w = BoundaryPath::zero(&grid());
        assert!(matches!(tilt_path(&w, 1.0, 7.0), Err(SimError::OutOfDomain(_))));
        let once = tilt_path(&w, 1.0, 1.0).unwrap();
        assert!(tilt_path(&once, 1.0, 1.0).is_err());
    }
}
