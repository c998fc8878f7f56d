//! Replica orchestration.
//!
//! Replica `r` draws all of its randomness from keys `(master_seed, r, _)`,
//! so results depend only on the replica index and never on scheduling. Work
//! is spread over a dedicated rayon pool and collected back in index order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{sample_boundary, BoundaryPath};
use crate::error::{Result, SimError};
use crate::grid::GridSpec;
use crate::rng::{make_key, NoiseHandle, NoiseMode, Purpose, RngKey};
use crate::she::{ensure_contained, HeightField, PropagatorRow, Stepper, DEFAULT_GUARD_MARGIN};

/// Runs `task(replica)` for `replica in 0..replicas` on `workers` threads and
/// returns the outputs in replica order. The first failing replica (by
/// index) is reported with its id attached.
pub fn run_ensemble<R, F>(replicas: usize, workers: usize, task: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(u64) -> Result<R> + Sync,
{
    if replicas == 0 {
        return Err(SimError::EmptyEnsemble);
    }
    let run = |r: usize| task(r as u64).map_err(|e| e.in_replica(r as u64));
    let outputs: Vec<Result<R>> = if workers <= 1 {
        (0..replicas).map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| SimError::InvalidParams(format!("thread pool: {e}")))?;
        pool.install(|| (0..replicas).into_par_iter().map(run).collect())
    };
    outputs.into_iter().collect()
}

/// Law of the initial profile `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialData {
    /// Two-sided Brownian motion pinned at the origin.
    #[default]
    Brownian,
    /// `W = 0`.
    Flat,
}

/// Everything that determines an ensemble besides the observable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub grid: GridSpec,
    pub replicas: usize,
    pub master_seed: u64,
    pub workers: usize,
    pub noise: NoiseMode,
    #[serde(default)]
    pub initial: InitialData,
    pub guard_margin: usize,
}

impl EnsembleSpec {
    pub fn new(grid: GridSpec, replicas: usize, master_seed: u64) -> Self {
        Self {
            grid,
            replicas,
            master_seed,
            workers: 1,
            noise: NoiseMode::On,
            initial: InitialData::Brownian,
            guard_margin: DEFAULT_GUARD_MARGIN,
        }
    }

    pub fn with_workers(self, workers: usize) -> Self {
        Self { workers: workers.max(1), ..self }
    }

    pub fn with_noise(self, noise: NoiseMode) -> Self {
        Self { noise, ..self }
    }

    pub fn with_initial(self, initial: InitialData) -> Self {
        Self { initial, ..self }
    }

    pub fn with_grid(self, grid: GridSpec) -> Self {
        Self { grid, ..self }
    }

    pub fn with_replicas(self, replicas: usize) -> Self {
        Self { replicas, ..self }
    }

    pub fn t(&self) -> f64 {
        self.grid.t_final
    }

    pub fn key(&self, replica: u64, purpose: Purpose) -> RngKey {
        make_key(self.master_seed, replica, purpose)
    }

    /// Key for ensemble-level resampling, disjoint from every replica key.
    pub fn bootstrap_key(&self) -> RngKey {
        make_key(self.master_seed, u64::MAX, Purpose::Auxiliary)
    }

    pub fn noise_handle(&self, replica: u64) -> NoiseHandle {
        NoiseHandle::new(self.key(replica, Purpose::Noise), self.grid.n_sites, self.noise)
    }

    pub fn boundary(&self, replica: u64) -> BoundaryPath {
        match self.initial {
            InitialData::Brownian => sample_boundary(&self.grid, 0.0, self.key(replica, Purpose::Boundary)),
            InitialData::Flat => BoundaryPath::zero(&self.grid),
        }
    }

    /// Runs `task` over every replica of this ensemble.
    pub fn run<R, F>(&self, task: F) -> Result<Vec<R>>
    where
        R: Send,
        F: Fn(u64) -> Result<R> + Sync,
    {
        run_ensemble(self.replicas, self.workers, task)
    }

    /// Green row and boundary path of one replica, rejecting leaky domains.
    pub fn draw_row(&self, replica: u64) -> Result<(PropagatorRow, BoundaryPath)> {
        let row = Stepper::new(&self.grid).green_row(&self.noise_handle(replica))?;
        ensure_contained(&row, self.guard_margin)?;
        Ok((row, self.boundary(replica)))
    }

    /// Forward solution from `exp(init)` with this replica's noise.
    pub fn solve(&self, replica: u64, init: &BoundaryPath) -> Result<HeightField> {
        Stepper::new(&self.grid).evolve_log(&init.values, &self.noise_handle(replica))
    }
}

/// Draws green rows for an ensemble. With the noise switched off the row is
/// deterministic and is computed only once.
pub struct RowSampler<'a> {
    spec: &'a EnsembleSpec,
    fixed: Option<PropagatorRow>,
}

impl<'a> RowSampler<'a> {
    pub fn new(spec: &'a EnsembleSpec) -> Result<Self> {
        let fixed = match spec.noise {
            NoiseMode::Off => Some(spec.draw_row(0)?.0),
            NoiseMode::On => None,
        };
        Ok(Self { spec, fixed })
    }

    pub fn row(&self, replica: u64) -> Result<PropagatorRow> {
        match &self.fixed {
            Some(row) => Ok(row.clone()),
            None => Ok(self.spec.draw_row(replica)?.0),
        }
    }

    pub fn draw(&self, replica: u64) -> Result<(PropagatorRow, BoundaryPath)> {
        Ok((self.row(replica)?, self.spec.boundary(replica)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worker_count_does_not_change_results() {
        let g = GridSpec::new(0.1, None, 4.0, 0.3).unwrap();
        let spec = EnsembleSpec::new(g, 12, 99);
        let task = |r: u64| {
            let (row, w) = spec.draw_row(r)?;
            Ok(row.log_pairing(&w.values))
        };
        let one = run_ensemble(12, 1, task).unwrap();
        let four = run_ensemble(12, 4, task).unwrap();
        assert_eq!(one.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), four.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn failing_replica_is_named() {
        let err = run_ensemble(5, 2, |r| if r == 3 { Err(SimError::Overflow { step: 17 }) } else { Ok(r) })
            .unwrap_err();
        assert_eq!(err, SimError::Overflow { step: 17 }.in_replica(3));
        assert!(err.to_string().contains("replica 3") && err.to_string().contains("step 17"));
    }

    #[test]
    fn single_replica_and_empty_ensembles() {
        assert_eq!(run_ensemble(1, 1, |r| Ok(r)).unwrap(), vec![0]);
        assert_eq!(run_ensemble(0, 1, |r| Ok(r)), Err(SimError::EmptyEnsemble));
    }
}
