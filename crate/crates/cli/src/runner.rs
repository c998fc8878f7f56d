//! Dispatch from registry names to checks, and the on-disk layout of a run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kpl_core::bounds::{
    chebyshev_for, chebyshev_right_tail, coupling_xy, girsanov_moment, lower_bound_certificate, tail_lemmas,
    LowerBoundParams,
};
use kpl_core::identities::*;
use kpl_core::oracle::{oracle_selftest, Observable, TinyInstance};
use kpl_core::polymer::AnnealedDensity;
use kpl_core::report::IdentityReport;

use crate::config::ExperimentConfig;
use crate::manifest::RunManifest;
use crate::output::{write_reports_csv, ReportDocument, Table, SCHEMA_VERSION};
use crate::registry::lookup;
use crate::{plot, CliError, EXIT_CHECK_FAILED, EXIT_PASS};

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub document: ReportDocument,
    pub out_dir: Option<PathBuf>,
    pub wall_seconds: f64,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.document.pass {
            EXIT_PASS
        } else {
            EXIT_CHECK_FAILED
        }
    }
}

#[derive(Default)]
struct Collected {
    reports: Vec<IdentityReport>,
    tables: BTreeMap<String, Table>,
}

impl Collected {
    fn table(&mut self, name: &str, columns: &[&str]) -> &mut Table {
        self.tables.entry(name.to_string()).or_insert_with(|| Table::new(columns))
    }

    fn density(&mut self, name: &str, t: f64, d: &AnnealedDensity) {
        let table = self.table(name, &["t", "y", "density", "density_stderr"]);
        for (k, y) in d.ys.iter().enumerate() {
            table.push(vec![t, *y, d.mean_probs[k], d.stderr_probs[k]]);
        }
    }
}

fn lower_bound_params(config: &ExperimentConfig, t: f64) -> Result<LowerBoundParams, CliError> {
    let p = &config.parameters;
    Ok(LowerBoundParams::new(config.require(p.lambda, "lambda")?, config.require(p.m_cap, "m_cap")?, t)?)
}

fn observable(name: &str) -> Result<Observable, CliError> {
    Ok(match name {
        "mean_h" => Observable::MeanH,
        "var_h" => Observable::VarH,
        "mean_abs_endpoint" => Observable::MeanAbsEndpoint,
        "mean_endpoint_sq" => Observable::MeanEndpointSq,
        "mean_quenched_mean_sq" => Observable::MeanQuenchedMeanSq,
        other => {
            return Err(CliError::Config(format!(
                "unknown observable `{other}`; expected mean_h, var_h, mean_abs_endpoint, mean_endpoint_sq or mean_quenched_mean_sq"
            )))
        }
    })
}

fn run_at(config: &ExperimentConfig, t: f64, out: &mut Collected) -> Result<(), CliError> {
    let spec = config.ensemble(t)?;
    let p = &config.parameters;
    let name = config.experiment.as_str();
    match name {
        "variance_identity" => out.reports.push(check_variance_identity(&spec)?),
        "total_variance" => out.reports.push(check_total_variance(&spec)?),
        "upper_bound_chain" => out.reports.push(check_upper_bound_chain(&spec)?),
        "lemma32_tradeoff" => {
            let deltas = p.delta_list.clone().unwrap_or_else(|| vec![t.powf(-1.0 / 3.0), 0.5, 1.0]);
            out.reports.extend(check_delta_tradeoff(&spec, &deltas)?);
        }
        "free_energy" => {
            let thetas = config.require(p.theta_list.as_ref(), "theta_list")?;
            let reports = check_free_energy(&spec, thetas)?;
            let table = out.table("free_energy", &["t", "theta", "shift", "shift_stderr", "exact"]);
            for r in &reports {
                table.push(vec![t, r.params["theta"], r.lhs.mean, r.lhs.stderr, r.rhs.mean]);
            }
            out.reports.extend(reports);
        }
        "var_growth" => out.reports.push(check_var_growth(&spec, config.require(p.theta, "theta")?)?),
        "shear_shift" => {
            let o = check_shear_shift(&spec, config.require(p.theta, "theta")?)?;
            out.density("shear_tilted", t, &o.tilted);
            out.density("shear_untilted", t, &o.untilted);
            out.reports.extend(o.reports);
        }
        "convexity" => out.reports.push(check_convexity(&spec, config.require(p.theta_list.as_ref(), "theta_list")?)?),
        "var_decomposition" => {
            out.reports.extend(check_var_decomposition(&spec, config.require(p.x_list.as_ref(), "x_list")?)?)
        }
        "cov_H_W" => {
            out.reports.push(check_cov_h_w(&spec, config.require(p.z, "z")?, config.require(p.x, "x")?)?)
        }
        "gaussian_tail" => {
            let o = check_gaussian_tail(&spec)?;
            out.density("annealed_density", t, &o.density);
            out.reports.extend(o.reports);
        }
        "burgers_density" => {
            let o = check_burgers_density(&spec, p.l1_tolerance.unwrap_or(0.1))?;
            let table = out.table(
                "burgers_density",
                &["t", "y", "two_point", "two_point_stderr", "density", "density_stderr"],
            );
            for k in 0..o.lags.len() {
                table.push(vec![t, o.lags[k], o.two_point[k], o.two_point_stderr[k], o.density[k], o.density_stderr[k]]);
            }
            out.reports.extend(o.reports);
        }
        "cov_decay" => {
            let o = check_cov_decay(&spec, config.require(p.x_list.as_ref(), "x_list")?)?;
            let table = out.table("cov_decay", &["t", "x", "covariance", "covariance_stderr"]);
            for (x, e) in &o.curve {
                table.push(vec![t, *x, e.mean, e.stderr]);
            }
            out.reports.extend(o.reports);
        }
        "chebyshev_tail" => {
            let report = match (p.theta, p.n) {
                (Some(theta), Some(n)) => chebyshev_right_tail(&spec, theta, n)?,
                _ => chebyshev_for(&spec, &lower_bound_params(config, t)?)?,
            };
            out.reports.push(report);
        }
        "coupling" => {
            let o = coupling_xy(&spec, config.require(p.theta, "theta")?, config.require(p.n, "n")?)?;
            let table = out.table("coupling", &["t", "replica", "x", "y", "log1p_x", "exponential"]);
            for s in &o.samples {
                table.push(vec![t, s.replica_id as f64, s.x, s.y, s.log1p_x, s.exponential]);
            }
            out.reports.push(o.report);
        }
        "tail_lemmas" => out.reports.extend(tail_lemmas(&spec, &lower_bound_params(config, t)?)?),
        "girsanov" => {
            let samples = p.samples.unwrap_or(config.replicas);
            out.reports.push(girsanov_moment(
                config.require(p.theta, "theta")?,
                config.require(p.n, "n")?,
                samples,
                config.master_seed,
            )?)
        }
        "lower_bound_certificate" => out.reports.push(lower_bound_certificate(&spec, &lower_bound_params(config, t)?)?),
        "duality_selftest" => out.reports.push(check_duality(&spec)?),
        "oracle_selftest" => {
            let names = p.observables.clone().unwrap_or_else(|| vec!["mean_h".into(), "var_h".into(), "mean_abs_endpoint".into()]);
            let observables = names.iter().map(|n| observable(n)).collect::<Result<Vec<_>, _>>()?;
            let instance = TinyInstance::new(spec.grid, p.order.unwrap_or(kpl_core::oracle::DEFAULT_ORDER), config.noise)?;
            out.reports.extend(oracle_selftest(
                &instance,
                &observables,
                config.replicas,
                config.master_seed,
                config.workers(),
                p.sigmas.unwrap_or(4.0),
            )?);
        }
        other => unreachable!("`{other}` is registered but has no runner"),
    }
    Ok(())
}

fn run_sweep(config: &ExperimentConfig, out: &mut Collected) -> Result<(), CliError> {
    let specs = config.grid.times()?.iter().map(|&t| config.ensemble(t)).collect::<Result<Vec<_>, _>>()?;
    let window = config.parameters.window.unwrap_or([0.55, 0.80]);
    let o = exponent_sweep(&specs, (window[0], window[1]))?;
    let table = out.table("exponent_sweep", &["t", "psi", "psi_stderr", "mean_h", "mean_h_stderr", "abs_moment", "abs_moment_stderr"]);
    for p in &o.points {
        table.push(vec![p.t, p.psi.mean, p.psi.stderr, p.c.mean, p.c.stderr, p.abs_moment.mean, p.abs_moment.stderr]);
    }
    let fit = out.table("exponent_fit", &["slope", "slope_stderr", "intercept", "r_squared"]);
    fit.push(vec![o.fit.slope, o.fit.slope_stderr, o.fit.intercept, o.fit.r_squared]);
    out.reports.push(o.report);
    Ok(())
}

/// Runs the experiment in memory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    config.validate()?;
    let descriptor = lookup(&config.experiment)?;
    let start = Instant::now();
    let mut out = Collected::default();
    if config.experiment == "exponent_sweep" {
        run_sweep(config, &mut out)?;
    } else {
        for t in config.grid.times()? {
            run_at(config, t, &mut out)?;
        }
    }
    let pass = out.reports.iter().all(|r| r.pass);
    Ok(RunOutcome {
        document: ReportDocument {
            schema_version: SCHEMA_VERSION,
            experiment: config.experiment.clone(),
            anchor: descriptor.anchor.to_string(),
            pass,
            reports: out.reports,
            tables: out.tables,
        },
        out_dir: None,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs the experiment and writes report.json, tables/*.csv, plots/*.svg
/// and manifest.json under `out_dir`.
pub fn run_to_dir(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome, CliError> {
    let mut outcome = run_experiment(config)?;
    write_outputs(&outcome.document, out_dir)?;
    RunManifest::new(config, outcome.wall_seconds).write(&out_dir.join("manifest.json"))?;
    outcome.out_dir = Some(out_dir.to_path_buf());
    Ok(outcome)
}

pub fn write_outputs(doc: &ReportDocument, out_dir: &Path) -> Result<(), CliError> {
    let tables = out_dir.join("tables");
    std::fs::create_dir_all(&tables)?;
    std::fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(doc)?)?;
    write_reports_csv(&doc.reports, &tables.join("reports.csv"))?;
    for (name, table) in &doc.tables {
        table.write_csv(&tables.join(format!("{name}.csv")))?;
    }
    plot::write_plots(doc, &out_dir.join("plots"))?;
    Ok(())
}
