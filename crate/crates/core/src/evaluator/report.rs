//! CSV tables and SVG bar charts for metrics reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use crate::error::{Error, Result};

pub const REPORT_HEADER: [&str; 7] = ["scenario", "method", "accuracy", "precision", "recall", "f1", "runtime_ms"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    SvgBarChart,
}

impl ReportFormat {
    /// Picks the format from a file extension, CSV unless it ends in `.svg`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("svg") => ReportFormat::SvgBarChart,
            _ => ReportFormat::Csv,
        }
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "svg" | "svg_bar_chart" => Ok(ReportFormat::SvgBarChart),
            _ => Err(format!("unknown report format '{s}' (expected csv or svg)")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Row {
    scenario: String,
    method: String,
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    runtime_ms: f64,
}

pub fn report_csv(reports: &[MetricsReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(Row {
            scenario: r.scenario.clone(),
            method: r.method.clone(),
            accuracy: r.accuracy,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            runtime_ms: r.runtime_ms,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits UTF-8"))
}

/// Reads a table written by [`report_csv`]. Confusion counts and the config
/// echo are not part of the table and come back as defaults.
pub fn parse_report_csv(text: &str) -> Result<Vec<MetricsReport>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    if header != REPORT_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}, found {}", REPORT_HEADER.join(","), header.join(",")),
        });
    }
    rdr.deserialize::<Row>()
        .enumerate()
        .map(|(i, row)| {
            let r = row.map_err(|e| Error::Parse { line: i + 2, message: e.to_string() })?;
            Ok(MetricsReport {
                accuracy: r.accuracy,
                precision: r.precision,
                recall: r.recall,
                f1: r.f1,
                runtime_ms: r.runtime_ms,
                scenario: r.scenario,
                method: r.method,
                ..MetricsReport::default()
            })
        })
        .collect()
}

const PALETTE: [&str; 8] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1", "#9c755f"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for s in items {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Grouped bar chart: one panel per score, scenarios along the x axis and
/// one bar per method within each group.
pub fn report_svg(reports: &[MetricsReport]) -> String {
    type Score = fn(&MetricsReport) -> f64;
    let metrics: [(&str, Score); 4] = [
        ("accuracy", |r| r.accuracy),
        ("precision", |r| r.precision),
        ("recall", |r| r.recall),
        ("f1", |r| r.f1),
    ];
    let scenarios = first_seen(reports.iter().map(|r| r.scenario.as_str()));
    let methods = first_seen(reports.iter().map(|r| r.method.as_str()));
    let bar = 18.0;
    let group_w = bar * methods.len() as f64 + 20.0;
    let plot_w = (group_w * scenarios.len() as f64).max(120.0);
    let (plot_h, margin, panel_gap) = (160.0, 50.0, 40.0);
    let panel_w = plot_w + margin + 10.0;
    let width = panel_w * 2.0 + panel_gap;
    let legend_h = 20.0 * methods.len() as f64 + 10.0;
    let panel_h = plot_h + 70.0;
    let height = panel_h * 2.0 + legend_h + 10.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, (name, value)) in metrics.iter().enumerate() {
        let ox = (k % 2) as f64 * (panel_w + panel_gap) + margin;
        let oy = (k / 2) as f64 * panel_h + 25.0;
        let _ = writeln!(s, r#"<g transform="translate({ox:.1},{oy:.1})">"#);
        let _ = writeln!(s, r#"<text x="{:.1}" y="-8" text-anchor="middle" font-size="13">{name}</text>"#, plot_w / 2.0);
        for tick in 0..=4 {
            let v = tick as f64 / 4.0;
            let y = plot_h * (1.0 - v);
            let _ = writeln!(
                s,
                r##"<line x1="0" y1="{y:.1}" x2="{plot_w:.1}" y2="{y:.1}" stroke="#ddd"/><text x="-6" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
                y + 4.0
            );
        }
        for (g, scen) in scenarios.iter().enumerate() {
            let gx = g as f64 * group_w + 10.0;
            for (m, method) in methods.iter().enumerate() {
                let Some(r) = reports.iter().find(|r| r.scenario == *scen && r.method == *method) else {
                    continue;
                };
                let v = value(r).clamp(0.0, 1.0);
                let h = plot_h * v;
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"><title>{} {}: {:.4}</title></rect>"#,
                    gx + m as f64 * bar,
                    plot_h - h,
                    bar - 2.0,
                    PALETTE[m % PALETTE.len()],
                    escape(scen),
                    escape(method),
                    value(r)
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                gx + bar * methods.len() as f64 / 2.0,
                plot_h + 16.0,
                escape(scen)
            );
        }
        let _ = writeln!(s, r#"<line x1="0" y1="{plot_h:.1}" x2="{plot_w:.1}" y2="{plot_h:.1}" stroke="black"/>"#);
        let _ = writeln!(s, "</g>");
    }
    let ly = panel_h * 2.0 + 10.0;
    for (m, method) in methods.iter().enumerate() {
        let y = ly + 20.0 * m as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{margin:.1}" y="{y:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            PALETTE[m % PALETTE.len()],
            margin + 18.0,
            y + 10.0,
            escape(method)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `reports` to `path`. Fails without touching the filesystem when
/// there is nothing to report.
pub fn emit_report(reports: &[MetricsReport], path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::InsufficientData("no metrics reports to write".into()));
    }
    let body = match format {
        ReportFormat::Csv => report_csv(reports)?,
        ReportFormat::SvgBarChart => report_svg(reports),
    };
    fs::write(path, body)?;
    Ok(())
}
