//! Experiment configuration as read from JSON.

use std::path::{Path, PathBuf};

use kpl_core::ensemble::{EnsembleSpec, InitialData};
use kpl_core::grid::GridSpec;
use kpl_core::rng::NoiseMode;
use serde::{Deserialize, Serialize};

use crate::registry;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dx: f64,
    /// Defaults to `dx^2 / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Half width of the domain. Defaults to `max(10, 6 t^(2/3)) + |theta| t`
    /// per time, with `theta` the largest drift the experiment uses.
    #[serde(rename = "L", alias = "half_width", default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_list: Option<Vec<f64>>,
}

impl GridConfig {
    pub fn times(&self) -> Result<Vec<f64>, CliError> {
        match (&self.t, &self.t_list) {
            (Some(t), None) => Ok(vec![*t]),
            (None, Some(ts)) if !ts.is_empty() => Ok(ts.clone()),
            (None, Some(_)) => Err(CliError::Config("grid.t_list must not be empty".into())),
            _ => Err(CliError::Config("grid: exactly one of `t` or `t_list` is required".into())),
        }
    }

    /// A drift `theta` moves the polymer endpoint by about `theta t`, so the
    /// automatic width grows by that much.
    pub fn half_width_for(&self, t: f64, drift: f64) -> f64 {
        self.half_width.unwrap_or_else(|| (6.0 * t.powf(2.0 / 3.0)).max(10.0) + drift.abs() * t)
    }

    pub fn at(&self, t: f64, drift: f64) -> Result<GridSpec, CliError> {
        Ok(GridSpec::new(self.dx, self.dt, self.half_width_for(t, drift), t)?)
    }
}

/// Experiment parameters; each experiment reads the ones it needs and
/// rejects the run if a required one is missing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parameters {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    /// Sample count for experiments that draw only the boundary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Gauss–Hermite order for the quadrature oracle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observables: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l1_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
}

impl Parameters {
    /// Largest `|theta|` among `theta` and `theta_list`.
    pub fn max_drift(&self) -> f64 {
        self.theta.iter().chain(self.theta_list.iter().flatten()).fold(0.0, |m, th| m.max(th.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub grid: GridConfig,
    pub replicas: usize,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub noise: NoiseMode,
    #[serde(default)]
    pub initial: InitialData,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard_margin: Option<usize>,
    #[serde(default)]
    pub parameters: Parameters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<(), CliError> {
        registry::lookup(&self.experiment)?;
        if self.replicas == 0 {
            return Err(CliError::Config("replicas must be at least 1".into()));
        }
        for t in self.grid.times()? {
            self.grid.at(t, self.parameters.max_drift())?;
        }
        Ok(())
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or(1).max(1)
    }

    pub fn ensemble(&self, t: f64) -> Result<EnsembleSpec, CliError> {
        let mut spec = EnsembleSpec::new(self.grid.at(t, self.parameters.max_drift())?, self.replicas, self.master_seed)
            .with_workers(self.workers())
            .with_noise(self.noise)
            .with_initial(self.initial);
        if let Some(margin) = self.guard_margin {
            spec.guard_margin = margin;
        }
        Ok(spec)
    }

    pub fn require<T: Copy>(&self, value: Option<T>, name: &str) -> Result<T, CliError> {
        value.ok_or_else(|| {
            CliError::Config(format!("parameter `{name}` is required by experiment `{}`", self.experiment))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"experiment": "variance_identity", "grid": {"dx": 0.1, "L": 5, "t": 1}, "replicas": 10, "master_seed": 3}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        let g = c.grid.at(1.0, 0.0).unwrap();
        assert!((g.dt - 0.005).abs() < 1e-15);
        assert_eq!(c.workers(), 1);
        assert_eq!(c.noise, NoiseMode::On);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("\"replicas\"", "\"replica_count\": 1, \"replicas\"");
        let err = ExperimentConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("replica_count"), "{err}");
        let text = MINIMAL.replace("\"L\": 5", "\"L\": 5, \"nx\": 3");
        assert!(ExperimentConfig::from_json(&text).unwrap_err().to_string().contains("nx"));
    }

    #[test]
    fn missing_fields_are_named() {
        let text = MINIMAL.replace(", \"master_seed\": 3", "");
        assert!(ExperimentConfig::from_json(&text).unwrap_err().to_string().contains("master_seed"));
    }

    #[test]
    fn unstable_step_cites_the_constraint() {
        let text = MINIMAL.replace("\"dx\": 0.1", "\"dx\": 0.1, \"dt\": 0.02");
        let err = ExperimentConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("dt <= dx^2"), "{err}");
    }

    #[test]
    fn times_need_exactly_one_form() {
        let text = MINIMAL.replace("\"t\": 1", "\"t\": 1, \"t_list\": [1, 2]");
        assert!(ExperimentConfig::from_json(&text).is_err());
        let text = MINIMAL.replace("\"t\": 1", "\"t_list\": [1, 2]");
        assert_eq!(ExperimentConfig::from_json(&text).unwrap().grid.times().unwrap(), vec![1.0, 2.0]);
    }
}
