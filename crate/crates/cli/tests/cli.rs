use std::path::Path;
use std::process::{Command, Output};

use kpl::output::ReportDocument;
use kpl::registry::default_config;
use kpl::ExperimentConfig;

fn kpl(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kpl"))
        .args(args)
        .current_dir(dir)
        .env_remove("KPL_WORKERS")
        .output()
        .expect("kpl runs")
}

fn write_config(dir: &Path, name: &str, config: &ExperimentConfig) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn small(name: &str) -> ExperimentConfig {
    let mut c = default_config(name).unwrap();
    c.grid.dx = 0.1;
    c.replicas = 40;
    c.output = None;
    c
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir.join("tables"))
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn duality_default_config_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = default_config("duality_selftest").unwrap();
    c.replicas = 10;
    let cfg = write_config(tmp.path(), "d.json", &c);
    let out = kpl(&["run", &cfg, "--out", "run"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = ReportDocument::load(&tmp.path().join("run/report.json")).unwrap();
    assert!(doc.pass);
    assert!(doc.reports[0].diagnostics["max_residual"] < 1e-9);
    assert!(tmp.path().join("run/manifest.json").exists());
    assert!(tmp.path().join("run/tables/reports.csv").exists());
}

#[test]
fn free_energy_table_has_exact_parabola() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small("free_energy");
    c.grid.t = Some(2.0);
    c.parameters.theta_list = Some(vec![0.0, 0.5, 1.0]);
    let cfg = write_config(tmp.path(), "f.json", &c);
    let out = kpl(&["run", &cfg, "--out", "run"], tmp.path());
    assert!(matches!(out.status.code(), Some(0) | Some(2)), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(tmp.path().join("run/tables/reports.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let row = reader
        .records()
        .map(|r| r.unwrap())
        .find(|r| &r[col("theta")] == "1.0")
        .expect("row for theta = 1");
    assert_eq!(&row[col("rhs")], "1.0");
    assert!(tmp.path().join("run/plots/free_energy.svg").exists());
}

#[test]
fn unstable_step_exits_with_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"{"experiment": "variance_identity", "grid": {"dx": 0.1, "dt": 0.05, "L": 5, "t": 1},
                   "replicas": 10, "master_seed": 1}"#;
    std::fs::write(tmp.path().join("bad.json"), text).unwrap();
    let out = kpl(&["run", "bad.json"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dt <= dx^2"));
}

#[test]
fn unknown_key_and_experiment_exit_with_error() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("a.json"),
        r#"{"experiment": "free_enrgy", "grid": {"dx": 0.1, "t": 1}, "replicas": 1, "master_seed": 1}"#,
    )
    .unwrap();
    let out = kpl(&["run", "a.json"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("free_energy"));
    std::fs::write(
        tmp.path().join("b.json"),
        r#"{"experiment": "free_energy", "grid": {"dx": 0.1, "t": 1}, "replicas": 1, "master_seed": 1, "seed": 4}"#,
    )
    .unwrap();
    let out = kpl(&["run", "b.json"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field `seed`"));
}

#[test]
fn failed_check_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small("exponent_sweep");
    c.grid.t_list = Some(vec![1.0, 1.5, 2.0]);
    // A window that no slope can fall into.
    c.parameters.window = Some([5.0, 6.0]);
    let cfg = write_config(tmp.path(), "s.json", &c);
    let out = kpl(&["run", &cfg, "--out", "run"], tmp.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("run/plots/exponent_sweep.svg").exists());
    let svg = std::fs::read_to_string(tmp.path().join("run/plots/exponent_sweep.svg")).unwrap();
    assert!(svg.contains("slope = "));
}

#[test]
fn manifest_rerun_reproduces_csv_with_other_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small("cov_decay");
    c.parameters.x_list = Some(vec![0.0, 1.0, 3.0]);
    let cfg = write_config(tmp.path(), "c.json", &c);
    let first = kpl(&["run", &cfg, "--out", "a", "--workers", "1"], tmp.path());
    assert!(first.status.code().is_some_and(|c| c != 1));
    let second = kpl(&["run", "a/manifest.json", "--out", "b", "--workers", "3"], tmp.path());
    assert_eq!(first.status.code(), second.status.code());
    assert_eq!(csv_files(&tmp.path().join("a")), csv_files(&tmp.path().join("b")));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let c = small("variance_identity");
    let cfg = write_config(tmp.path(), "v.json", &c);
    kpl(&["run", &cfg, "--out", "a", "--seed", "5"], tmp.path());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["master_seed"], 5);
    assert_eq!(manifest["seeds"]["master_seed"], 5);
}

#[test]
fn plot_of_empty_report_warns() {
    let tmp = tempfile::tempdir().unwrap();
    let doc = r#"{"schema_version": 1, "experiment": "x", "anchor": "a", "pass": true, "reports": [], "tables": {}}"#;
    std::fs::write(tmp.path().join("report.json"), doc).unwrap();
    let out = kpl(&["plot", "report.json"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert!(!tmp.path().join("plots").exists());
}

#[test]
fn list_shows_every_experiment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = kpl(&["list"], tmp.path());
    let text = String::from_utf8_lossy(&out.stdout);
    for d in kpl::registry::registry() {
        assert!(text.contains(d.name), "{}", d.name);
    }
}
