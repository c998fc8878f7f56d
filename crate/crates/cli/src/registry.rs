//! The fixed list of experiments the runner knows about.

use std::path::PathBuf;

use crate::config::{ExperimentConfig, GridConfig, Parameters};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Descriptor {
    pub name: &'static str,
    /// The formula the experiment checks.
    pub anchor: &'static str,
    pub summary: &'static str,
}

const fn d(name: &'static str, anchor: &'static str, summary: &'static str) -> Descriptor {
    Descriptor { name, anchor, summary }
}

pub const REGISTRY: [Descriptor; 21] = [
    d("variance_identity", "Var h_0(t,0) = E ∫|y| p(t,y) dy", "height variance equals the mean absolute endpoint"),
    d("total_variance", "E ∫y² p(t,y) dy = t + E(∫y p(t,y) dy)²", "annealed second moment splits into quenched variance t and mean spread"),
    d("free_energy", "E h_θ(t,0) − E h_0(t,0) = θ²t/2", "free-energy shift is a parabola in the drift"),
    d("var_growth", "√Var h_θ(t,0) ≤ √Var h_0(t,0) + √(|θ|t)", "drift changes the height variance by at most |θ|t"),
    d("shear_shift", "law of B_t under drift θ = law of B_t + θt under no drift", "drift shears the endpoint law"),
    d("convexity", "θ ↦ h_θ(t,0) convex, ∂²_θ h_θ = Var_p(B_t)", "drifted height is convex in the drift"),
    d("var_decomposition", "Var h_0(t,0) = Cov[𝓗(t,0) − 𝓗(t,x), W(x)] + Cov[𝓗(t,x), 𝓗(t,0)]", "variance splits into boundary and spatial covariance"),
    d("cov_H_W", "Cov[𝓗(t,z), W(x)] = E ∫p(t,y) 1{z+y>0} min(x, z+y) dy − min(x, z)", "covariance of the height increment with the boundary"),
    d("gaussian_tail", "log E p(t,y) ≈ a − y²/(2s²)", "annealed endpoint density has a Gaussian tail"),
    d("burgers_density", "E[∂ₓh(t,x) ∂ₓW(x−y)] = E p(t,y)", "slope two-point function equals the annealed endpoint density"),
    d("cov_decay", "Cov[𝓗(t,x), 𝓗(t,0)] → 0 as |x| → ∞", "spatial covariance of the height vanishes at large distance"),
    d("lemma32_tradeoff", "√E(∫y p)² ≤ (4/δ)√Var h_0 + 2√(t/δ) + δt", "quenched mean spread is controlled by the height variance for every δ"),
    d("upper_bound_chain", "Var h_0(t,0) ≤ √(t + E(∫y p)²)", "upper bound on the height variance"),
    d("chebyshev_tail", "P_θ(B_t > n) ≤ Var h_0(t,0)/u, n = u + θt", "right tail of the drifted endpoint"),
    d("coupling", "Y ≤ log(1+X) pathwise; P_θ(B_t ≤ n) ≤ P(Y ≤ Exp(1))", "coupling between drifted and tilted boundaries"),
    d("tail_lemmas", "P(Y ≤ X) ≤ P(h_θ ≤ c₁) + P(h̃_θ > c₂) + P(X > c₃)", "the three tail terms of the union bound"),
    d("girsanov", "E exp(2θW(n) − θ²n) = e^{θ²n}", "second moment of the Girsanov density"),
    d("lower_bound_certificate", "ψ(t) ≥ C⁻¹ t^{2/3} via c₁ = c(t) + 2t^{1/3}", "assembled lower bound on the height variance"),
    d("exponent_sweep", "Var h_0(t,0) ≍ t^{2/3}", "log-log slope of the height variance over time"),
    d("duality_selftest", "h(t,0) = log(dx Σ_y Z_t(0,y) e^{W(y)})", "forward solve against the transposed green-row pairing"),
    d("oracle_selftest", "E_MC[f] = Σ_nodes w f (Gauss–Hermite)", "Monte Carlo against exhaustive quadrature on a tiny lattice"),
];

pub fn registry() -> &'static [Descriptor] {
    &REGISTRY
}

pub fn lookup(name: &str) -> Result<&'static Descriptor, CliError> {
    REGISTRY.iter().find(|d| d.name == name).ok_or_else(|| CliError::UnknownExperiment {
        name: name.to_string(),
        suggestions: suggestions(name),
    })
}

/// Registry names similar to `name`, most similar first; every name when
/// none is close.
pub fn suggestions(name: &str) -> Vec<String> {
    let lower = name.to_lowercase();
    let mut scored: Vec<(f64, &str)> = REGISTRY
        .iter()
        .map(|d| (strsim::jaro_winkler(&lower, &d.name.to_lowercase()), d.name))
        .filter(|(score, _)| *score >= 0.8)
        .collect();
    if scored.is_empty() {
        return REGISTRY.iter().map(|d| d.name.to_string()).collect();
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    scored.into_iter().map(|(_, n)| n.to_string()).collect()
}

fn grid(dx: f64, l: Option<f64>, t: f64) -> GridConfig {
    GridConfig { dx, dt: None, half_width: l, t: Some(t), t_list: None }
}

/// A runnable configuration for `name` at moderate cost.
pub fn default_config(name: &str) -> Result<ExperimentConfig, CliError> {
    lookup(name)?;
    let mut p = Parameters::default();
    let mut replicas = 1000;
    let mut g = grid(0.05, Some(10.0), 1.0);
    match name {
        "free_energy" => p.theta_list = Some(vec![0.0, 0.25, 0.5, 1.0]),
        "var_growth" => p.theta = Some(0.5),
        "shear_shift" => {
            p.theta = Some(0.5);
            g.t = Some(2.0);
        }
        "convexity" => p.theta_list = Some(vec![-1.0, -0.5, 0.0, 0.5, 1.0]),
        "var_decomposition" => p.x_list = Some(vec![0.5, 1.0, 2.0]),
        "cov_H_W" => {
            p.z = Some(0.0);
            p.x = Some(1.0);
        }
        "burgers_density" => {
            p.l1_tolerance = Some(0.1);
            g.half_width = Some(20.0);
        }
        "cov_decay" => {
            p.x_list = Some(vec![0.0, 0.5, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
            g.half_width = Some(20.0);
        }
        "gaussian_tail" => g.half_width = Some(15.0),
        "chebyshev_tail" | "coupling" => {
            p.theta = Some(0.5);
            p.n = Some(2.0);
        }
        "tail_lemmas" | "lower_bound_certificate" => {
            p.lambda = Some(3.0);
            p.m_cap = Some(8.0);
            g = grid(0.05, Some(20.0), 2.0);
        }
        "girsanov" => {
            p.theta = Some(0.5);
            p.n = Some(2.0);
            p.samples = Some(100_000);
        }
        "exponent_sweep" => {
            p.window = Some([0.55, 0.80]);
            g = GridConfig { dx: 0.1, dt: None, half_width: None, t: None, t_list: Some(vec![4.0, 8.0, 16.0, 32.0]) };
            replicas = 2000;
        }
        "duality_selftest" => replicas = 100,
        "oracle_selftest" => {
            g = GridConfig { dx: 1.0, dt: Some(0.5), half_width: Some(1.0), t: Some(1.0), t_list: None };
            p.order = Some(10);
            p.sigmas = Some(4.0);
            p.observables = Some(vec!["mean_h".into(), "var_h".into(), "mean_abs_endpoint".into()]);
            replicas = 100_000;
        }
        _ => {}
    }
    Ok(ExperimentConfig {
        experiment: name.to_string(),
        grid: g,
        replicas,
        master_seed: 20240601,
        workers: None,
        noise: Default::default(),
        initial: Default::default(),
        guard_margin: None,
        parameters: p,
        output: Some(PathBuf::from(format!("runs/{name}"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_is_complete_and_anchored() {
        assert_eq!(registry().len(), 21);
        let mut names: Vec<_> = registry().iter().map(|d| d.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 21);
        assert!(registry().iter().all(|d| !d.anchor.is_empty() && !d.summary.is_empty()));
    }

    #[test]
    fn unknown_names_get_suggestions() {
        let err = lookup("free_enrgy").unwrap_err();
        match &err {
            CliError::UnknownExperiment { suggestions, .. } => assert_eq!(suggestions[0], "free_energy"),
            other => panic!("{other}"),
        }
        assert_eq!(suggestions("dualty")[0], "duality_selftest");
        assert_eq!(suggestions("cov_h_w")[0], "cov_H_W");
        assert!(err.to_string().contains("did you mean"));
        assert_eq!(suggestions("zzzzzzzzzzzzzzzzzzzzzzzzzzzzzzzzz").len(), 21);
    }

    #[test]
    fn every_default_config_validates() {
        for d in registry() {
            let c = default_config(d.name).unwrap();
            c.validate().unwrap_or_else(|e| panic!("{}: {e}", d.name));
            let back = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
            assert_eq!(back, c);
        }
    }
}
