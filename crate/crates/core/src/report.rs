//! Structured outcome of a check: two sides with uncertainties, the pass rule
//! that was applied, and enough configuration to rerun it.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize};

use crate::ensemble::EnsembleSpec;
use crate::grid::GridSpec;
use crate::rng::NoiseMode;
use crate::stats::{Estimate, PairedEstimate};

/// Number of combined standard errors allowed before a check fails.
pub const SIGMA_SLACK: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    /// `|lhs - rhs| <= 3 sigma + systematic`.
    Equality,
    /// `lhs <= rhs + 3 sigma + systematic`.
    Inequality,
    /// Reported for information; always passes.
    Descriptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Simulation,
    Oracle,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub grid: Option<GridSpec>,
    pub replicas: usize,
    pub master_seed: u64,
    pub noise: NoiseMode,
}

impl From<&EnsembleSpec> for ConfigSnapshot {
    fn from(spec: &EnsembleSpec) -> Self {
        Self { grid: Some(spec.grid), replicas: spec.replicas, master_seed: spec.master_seed, noise: spec.noise }
    }
}

/// Default allowance for lattice bias: 0.05 absolute or 5% of the reference
/// side, whichever is larger.
pub fn default_systematic(reference: f64) -> f64 {
    (0.05 * reference.abs()).max(0.05)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub name: String,
    pub mode: CheckMode,
    pub origin: Origin,
    pub lhs: Estimate,
    pub rhs: Estimate,
    #[serde(deserialize_with = "nullable")]
    pub discrepancy: f64,
    #[serde(deserialize_with = "nullable")]
    pub combined_sigma: f64,
    pub systematic: f64,
    pub pass: bool,
    pub params: BTreeMap<String, f64>,
    #[serde(deserialize_with = "nullable_map")]
    pub diagnostics: BTreeMap<String, f64>,
    pub config: ConfigSnapshot,
}

impl IdentityReport {
    /// Report whose sigma is taken from jointly resampled sides.
    pub fn paired(name: &str, mode: CheckMode, est: PairedEstimate, systematic: f64, config: ConfigSnapshot) -> Self {
        Self::build(name, mode, est.lhs, est.rhs, est.diff.stderr, systematic, config)
    }

    /// Report for independently estimated sides.
    pub fn independent(
        name: &str,
        mode: CheckMode,
        lhs: Estimate,
        rhs: Estimate,
        systematic: f64,
        config: ConfigSnapshot,
    ) -> Self {
        let sigma = finite_or_zero(lhs.stderr).hypot(finite_or_zero(rhs.stderr));
        Self::build(name, mode, lhs, rhs, sigma, systematic, config)
    }

    fn build(
        name: &str,
        mode: CheckMode,
        lhs: Estimate,
        rhs: Estimate,
        sigma: f64,
        systematic: f64,
        config: ConfigSnapshot,
    ) -> Self {
        let mut report = Self {
            name: name.to_string(),
            mode,
            origin: Origin::Simulation,
            lhs,
            rhs,
            discrepancy: lhs.mean - rhs.mean,
            combined_sigma: sigma,
            systematic,
            pass: false,
            params: BTreeMap::new(),
            diagnostics: BTreeMap::new(),
            config,
        };
        report.pass = report.within_tolerance(SIGMA_SLACK, systematic);
        report
    }

    /// The pass rule re-evaluated with other tolerances.
    pub fn within_tolerance(&self, sigmas: f64, systematic: f64) -> bool {
        let slack = sigmas * finite_or_zero(self.combined_sigma) + systematic;
        match self.mode {
            CheckMode::Equality => self.discrepancy.abs() <= slack,
            CheckMode::Inequality => self.discrepancy <= slack,
            CheckMode::Descriptive => true,
        }
    }

    /// Re-evaluates the verdict with `sigmas` standard errors and the given
    /// systematic allowance.
    pub fn judged(mut self, sigmas: f64, systematic: f64) -> Self {
        self.systematic = systematic;
        self.pass = self.within_tolerance(sigmas, systematic);
        self.params.insert("sigma_slack".to_string(), sigmas);
        self
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }

    pub fn param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn diag(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }

    /// Ands an extra condition into the verdict.
    pub fn require(mut self, ok: bool) -> Self {
        self.pass &= ok;
        self
    }
}

fn finite_or_zero(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// JSON has no NaN; non-finite numbers are written as `null` and read back
/// as NaN.
pub fn nullable<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn nullable_map<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, f64>, D::Error> {
    let raw = BTreeMap::<String, Option<f64>>::deserialize(d)?;
    Ok(raw.into_iter().map(|(k, v)| (k, v.unwrap_or(f64::NAN))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snapshot() -> ConfigSnapshot {
        ConfigSnapshot { grid: None, replicas: 10, master_seed: 1, noise: NoiseMode::On }
    }

    fn est(mean: f64, stderr: f64) -> Estimate {
        Estimate { mean, stderr, ci_low: mean - 3.0 * stderr, ci_high: mean + 3.0 * stderr, n: 10 }
    }

    #[test]
    fn pass_rule_matches_its_definition() {
        let r = IdentityReport::independent("x", CheckMode::Equality, est(1.0, 0.03), est(1.2, 0.04), 0.05, snapshot());
        assert_eq!(r.combined_sigma, 0.05);
        assert!(r.pass, "0.2 <= 3 * 0.05 + 0.05");
        let r = IdentityReport::independent("x", CheckMode::Equality, est(1.0, 0.03), est(1.21, 0.04), 0.05, snapshot());
        assert!(!r.pass);
    }

    #[test]
    fn inequality_is_one_sided() {
        let below = IdentityReport::independent("x", CheckMode::Inequality, est(0.0, 0.0), est(5.0, 0.0), 0.0, snapshot());
        let above = IdentityReport::independent("x", CheckMode::Inequality, est(5.0, 0.0), est(0.0, 0.0), 0.0, snapshot());
        assert!(below.pass && !above.pass);
    }

    #[test]
    fn default_systematic_is_absolute_or_relative() {
        assert_eq!(default_systematic(0.5), 0.05);
        assert!((default_systematic(4.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn nan_fields_roundtrip_through_json() {
        let r = IdentityReport::independent("x", CheckMode::Descriptive, est(1.0, f64::NAN), est(1.0, 0.0), 0.0, snapshot())
            .diag("undefined", f64::NAN);
        let json = serde_json::to_string(&r).unwrap();
        let back: IdentityReport = serde_json::from_str(&json).unwrap();
        assert!(back.diagnostics["undefined"].is_nan());
        assert_eq!(back.name, "x");
    }
}
