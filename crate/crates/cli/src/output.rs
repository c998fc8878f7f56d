//! report.json and CSV tables.
//!
//! Numbers are written in their shortest round-trip form, so a CSV
//! is a pure function of the values it holds and reruns compare byte for
//! byte.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use kpl_core::report::IdentityReport;
use serde::{Deserialize, Deserializer, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// A rectangular numeric table; NaN is written as `null` in JSON and `NaN`
/// in CSV.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    #[serde(deserialize_with = "nullable_rows")]
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| number(*v)))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn nullable_rows<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
    let raw = Vec::<Vec<Option<f64>>>::deserialize(d)?;
    Ok(raw.into_iter().map(|r| r.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect()).collect())
}

/// Shortest representation that parses back to the same `f64`.
pub fn number(v: f64) -> String {
    format!("{v:?}")
}

/// Everything a run reports, as written to report.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub experiment: String,
    pub anchor: String,
    pub pass: bool,
    pub reports: Vec<IdentityReport>,
    #[serde(default)]
    pub tables: BTreeMap<String, Table>,
}

impl ReportDocument {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// One row per report: fixed leading columns, then every parameter and
/// diagnostic key that occurs in the run, sorted.
pub fn reports_table(reports: &[IdentityReport]) -> (Vec<String>, Vec<Vec<String>>) {
    let params: BTreeSet<&str> = reports.iter().flat_map(|r| r.params.keys().map(String::as_str)).collect();
    let diags: BTreeSet<&str> = reports.iter().flat_map(|r| r.diagnostics.keys().map(String::as_str)).collect();
    let mut header: Vec<String> = [
        "name", "mode", "origin", "pass", "lhs", "lhs_stderr", "rhs", "rhs_stderr", "discrepancy",
        "combined_sigma", "systematic",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(params.iter().map(|k| k.to_string()));
    header.extend(diags.iter().map(|k| format!("diag_{k}")));
    let rows = reports
        .iter()
        .map(|r| {
            let mut row = vec![
                r.name.clone(),
                label(&r.mode),
                label(&r.origin),
                r.pass.to_string(),
                number(r.lhs.mean),
                number(r.lhs.stderr),
                number(r.rhs.mean),
                number(r.rhs.stderr),
                number(r.discrepancy),
                number(r.combined_sigma),
                number(r.systematic),
            ];
            row.extend(params.iter().map(|k| r.params.get(*k).map(|v| number(*v)).unwrap_or_default()));
            row.extend(diags.iter().map(|k| r.diagnostics.get(*k).map(|v| number(*v)).unwrap_or_default()));
            row
        })
        .collect();
    (header, rows)
}

fn label<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

pub fn write_reports_csv(reports: &[IdentityReport], path: &Path) -> Result<(), CliError> {
    let (header, rows) = reports_table(reports);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use kpl_core::report::{CheckMode, ConfigSnapshot};
    use kpl_core::rng::NoiseMode;
    use kpl_core::stats::Estimate;

    #[test]
    fn table_roundtrips_nan_through_json() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![1.0, f64::NAN]);
        let back: Table = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back.rows[0][0], 1.0);
        assert!(back.rows[0][1].is_nan());
    }

    #[test]
    fn report_rows_share_one_header() {
        let cfg = ConfigSnapshot { grid: None, replicas: 1, master_seed: 0, noise: NoiseMode::On };
        let a = IdentityReport::independent("a", CheckMode::Equality, Estimate::exact(1.0), Estimate::exact(1.0), 0.0, cfg)
            .param("theta", 1.0);
        let b = IdentityReport::independent("b", CheckMode::Inequality, Estimate::exact(0.0), Estimate::exact(1.0), 0.0, cfg)
            .param("t", 2.0)
            .diag("l1", 0.5);
        let (header, rows) = reports_table(&[a, b]);
        assert_eq!(header[11..], ["t", "theta", "diag_l1"]);
        assert_eq!(rows[0][1], "equality");
        assert_eq!(rows[0][11..], ["", "1.0", ""]);
        assert_eq!(rows[1][11..], ["2.0", "", "0.5"]);
    }
}
