//! Minimal SVG line charts for the four standard figures.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::output::{ReportDocument, Table};
use crate::CliError;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            (lo, hi) = (lo - 0.5, hi + 0.5);
        }
        let pad = 0.05 * (hi - lo);
        Self { lo: lo - pad, hi: hi + pad, log }
    }

    fn unit(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            let mut t: Vec<f64> = (a..=b).map(|e| 10f64.powi(e)).collect();
            if t.len() < 2 {
                // Within one decade: label 1-2-5 steps.
                t = (self.lo.floor() as i32..=self.hi.ceil() as i32)
                    .flat_map(|e| [1.0, 2.0, 5.0].map(|m| m * 10f64.powi(e)))
                    .filter(|v| (self.lo..=self.hi).contains(&v.log10()))
                    .collect();
            }
            t
        } else {
            let span = self.hi - self.lo;
            let raw = span / 5.0;
            let mag = 10f64.powf(raw.log10().floor());
            let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
            let first = (self.lo / step).ceil() as i64;
            let last = (self.hi / step).floor() as i64;
            (first..=last).map(|k| k as f64 * step).collect()
        }
    }
}

fn label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Chart {
    x: Axis,
    y: Axis,
    body: String,
}

impl Chart {
    fn new(x: Axis, y: Axis) -> Self {
        Self { x, y, body: String::new() }
    }

    fn px(&self, v: f64) -> f64 {
        MARGIN_L + self.x.unit(v) * (W - MARGIN_L - MARGIN_R)
    }

    fn py(&self, v: f64) -> f64 {
        H - MARGIN_B - self.y.unit(v) * (H - MARGIN_T - MARGIN_B)
    }

    fn visible(&self, x: f64, y: f64) -> bool {
        x.is_finite() && y.is_finite() && (!self.x.log || x > 0.0) && (!self.y.log || y > 0.0)
    }

    fn line(&mut self, xs: &[f64], ys: &[f64], color: &str, dashed: bool) {
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter(|(x, y)| self.visible(**x, **y))
            .map(|(x, y)| format!("{:.2},{:.2}", self.px(*x), self.py(*y)))
            .collect();
        let dash = if dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let _ = writeln!(
            self.body,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"{dash} points=\"{}\"/>",
            pts.join(" ")
        );
    }

    fn points(&mut self, xs: &[f64], ys: &[f64], errs: Option<&[f64]>, color: &str) {
        for (k, (&x, &y)) in xs.iter().zip(ys).enumerate() {
            if !self.visible(x, y) {
                continue;
            }
            let (cx, cy) = (self.px(x), self.py(y));
            if let Some(e) = errs.map(|e| e[k]).filter(|e| e.is_finite() && *e > 0.0) {
                let lo = if self.y.log { (y - e).max(y * 1e-3) } else { y - e };
                let _ = writeln!(
                    self.body,
                    "<line x1=\"{cx:.2}\" x2=\"{cx:.2}\" y1=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\"/>",
                    self.py(lo),
                    self.py(y + e)
                );
            }
            let _ = writeln!(self.body, "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"3.5\" fill=\"{color}\"/>");
        }
    }

    fn render(&self, title: &str, xlabel: &str, ylabel: &str, legend: &[(&str, &str)], note: Option<&str>) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">"
        );
        let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
        let _ = writeln!(s, "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>", W / 2.0, escape(title));
        let (x0, x1, y0, y1) = (MARGIN_L, W - MARGIN_R, H - MARGIN_B, MARGIN_T);
        let _ = writeln!(s, "<rect x=\"{x0}\" y=\"{y1}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>", x1 - x0, y0 - y1);
        for t in self.x.ticks() {
            let x = self.px(t);
            let _ = writeln!(s, "<line x1=\"{x:.2}\" x2=\"{x:.2}\" y1=\"{y0}\" y2=\"{}\" stroke=\"#444\"/>", y0 + 5.0);
            let _ = writeln!(s, "<text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>", y0 + 18.0, label(t));
        }
        for t in self.y.ticks() {
            let y = self.py(t);
            let _ = writeln!(s, "<line x1=\"{}\" x2=\"{x0}\" y1=\"{y:.2}\" y2=\"{y:.2}\" stroke=\"#444\"/>", x0 - 5.0);
            let _ = writeln!(s, "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>", x0 - 8.0, y + 4.0, label(t));
        }
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", (x0 + x1) / 2.0, H - 15.0, escape(xlabel));
        let _ = writeln!(
            s,
            "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>",
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(ylabel)
        );
        s.push_str("<g>\n");
        s.push_str(&self.body);
        s.push_str("</g>\n");
        for (k, (name, color)) in legend.iter().enumerate() {
            let y = y1 + 16.0 + 16.0 * k as f64;
            let _ = writeln!(s, "<line x1=\"{}\" x2=\"{}\" y1=\"{y}\" y2=\"{y}\" stroke=\"{color}\" stroke-width=\"2\"/>", x1 - 170.0, x1 - 150.0);
            let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{}</text>", x1 - 145.0, y + 4.0, escape(name));
        }
        if let Some(note) = note {
            let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-weight=\"bold\">{}</text>", x0 + 10.0, y1 + 18.0, escape(note));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn cols(t: &Table, names: &[&str]) -> Option<Vec<Vec<f64>>> {
    names.iter().map(|n| t.column(n)).collect()
}

fn diagnostic(doc: &ReportDocument, report: &str, key: &str) -> Option<f64> {
    doc.reports.iter().find(|r| r.name == report).and_then(|r| r.diagnostics.get(key).copied())
}

fn exponent_plot(doc: &ReportDocument) -> Option<String> {
    let c = cols(doc.tables.get("exponent_sweep")?, &["t", "psi", "psi_stderr"])?;
    let (ts, psi, se) = (&c[0], &c[1], &c[2]);
    let fit = doc.tables.get("exponent_fit").and_then(|f| cols(f, &["slope", "slope_stderr", "intercept"]))?;
    let (slope, slope_se, intercept) = (fit[0][0], fit[1][0], fit[2][0]);
    let x = Axis::fit(ts.iter().copied(), true);
    let y = Axis::fit(psi.iter().zip(se).flat_map(|(p, e)| [*p, p + e, (p - e).max(p * 0.5)]), true);
    let mut chart = Chart::new(x, y);
    let grid: Vec<f64> = (0..=40).map(|k| 10f64.powf(x.lo + (x.hi - x.lo) * k as f64 / 40.0)).collect();
    let fitted: Vec<f64> = grid.iter().map(|t| (intercept + slope * t.ln()).exp()).collect();
    // Reference slope 2/3 through the geometric centre of the data.
    let n = ts.len() as f64;
    let (mx, my) = (ts.iter().map(|t| t.ln()).sum::<f64>() / n, psi.iter().map(|p| p.ln()).sum::<f64>() / n);
    let reference: Vec<f64> = grid.iter().map(|t| (my + 2.0 / 3.0 * (t.ln() - mx)).exp()).collect();
    chart.line(&grid, &fitted, "#1f77b4", false);
    chart.line(&grid, &reference, "#888888", true);
    chart.points(ts, psi, Some(se), "#d62728");
    Some(chart.render(
        "Height variance vs time",
        "t",
        "Var h_0(t,0)",
        &[("fit", "#1f77b4"), ("slope 2/3", "#888888"), ("ψ(t)", "#d62728")],
        Some(&format!("slope = {slope:.3} ± {slope_se:.3}")),
    ))
}

fn burgers_plot(doc: &ReportDocument) -> Option<String> {
    let c = cols(doc.tables.get("burgers_density")?, &["y", "two_point", "density"])?;
    let x = Axis::fit(c[0].iter().copied(), false);
    let y = Axis::fit(c[1].iter().chain(&c[2]).copied(), false);
    let mut chart = Chart::new(x, y);
    chart.line(&c[0], &c[2], "#1f77b4", false);
    chart.line(&c[0], &c[1], "#d62728", true);
    let note = diagnostic(doc, "burgers_density", "l1_distance").map(|l1| format!("L1 distance = {l1:.4}"));
    Some(chart.render(
        "Annealed endpoint density vs slope two-point function",
        "y",
        "density",
        &[("annealed density", "#1f77b4"), ("two-point", "#d62728")],
        note.as_deref(),
    ))
}

fn cov_decay_plot(doc: &ReportDocument) -> Option<String> {
    let c = cols(doc.tables.get("cov_decay")?, &["x", "covariance", "covariance_stderr"])?;
    let x = Axis::fit(c[0].iter().copied(), false);
    let y = Axis::fit(c[1].iter().zip(&c[2]).flat_map(|(v, e)| [v - e, v + e, 0.0]), false);
    let mut chart = Chart::new(x, y);
    chart.line(&[x.lo, x.hi], &[0.0, 0.0], "#888888", true);
    chart.line(&c[0], &c[1], "#1f77b4", false);
    chart.points(&c[0], &c[1], Some(&c[2]), "#1f77b4");
    Some(chart.render("Spatial covariance of the height", "x", "Cov[H(t,x), H(t,0)]", &[("estimate", "#1f77b4")], None))
}

fn free_energy_plot(doc: &ReportDocument) -> Option<String> {
    let c = cols(doc.tables.get("free_energy")?, &["t", "theta", "shift", "shift_stderr"])?;
    let x = Axis::fit(c[1].iter().copied().chain([0.0]), false);
    let y = Axis::fit(c[2].iter().zip(&c[3]).flat_map(|(v, e)| [v - e, v + e, 0.0]), false);
    let mut chart = Chart::new(x, y);
    let mut ts: Vec<f64> = c[0].clone();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let grid: Vec<f64> = (0..=60).map(|k| x.lo + (x.hi - x.lo) * k as f64 / 60.0).collect();
    for t in &ts {
        let exact: Vec<f64> = grid.iter().map(|th| 0.5 * th * th * t).collect();
        chart.line(&grid, &exact, "#888888", true);
    }
    chart.points(&c[1], &c[2], Some(&c[3]), "#d62728");
    Some(chart.render(
        "Free-energy shift vs drift",
        "θ",
        "E h_θ − E h_0",
        &[("θ²t/2", "#888888"), ("measured", "#d62728")],
        None,
    ))
}

/// Writes every figure the report has data for; returns the files written.
/// A report without any plottable table writes nothing.
pub fn write_plots(doc: &ReportDocument, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let figures: [(&str, fn(&ReportDocument) -> Option<String>); 4] = [
        ("exponent_sweep", exponent_plot),
        ("burgers_density", burgers_plot),
        ("cov_decay", cov_decay_plot),
        ("free_energy", free_energy_plot),
    ];
    let mut written = Vec::new();
    for (name, draw) in figures {
        if let Some(svg) = draw(doc) {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("{name}.svg"));
            std::fs::write(&path, svg)?;
            written.push(path);
        }
    }
    Ok(written)
}
