//! Per-pair pose errors, normalized cumulative histograms, medians and
//! report files (JSON, CSV, SVG). Angles are in degrees throughout.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use nalgebra::Vector3;

use crate::geom::{roe, rte, GeomError, Quaternion, RelativePose};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{predictions} predictions for {records} ground-truth records")]
    LengthMismatch { predictions: usize, records: usize },
    #[error("no errors to aggregate")]
    EmptyInput,
    #[error("histogram bin edges must be finite and strictly increasing")]
    InvalidEdges,
    #[error("report line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn io_err(path: &Path, source: std::io::Error) -> EvalError {
    EvalError::Io { path: path.display().to_string(), source }
}

/// ROE and RTE for each prediction against the ground truth at the same
/// index. Alignment is purely by position.
pub fn evaluate(predictions: &[RelativePose], ground_truth: &[RelativePose]) -> Result<Vec<(f64, f64)>, EvalError> {
    if predictions.len() != ground_truth.len() {
        return Err(EvalError::LengthMismatch { predictions: predictions.len(), records: ground_truth.len() });
    }
    predictions
        .iter()
        .zip(ground_truth)
        .map(|(p, g)| Ok((roe(&p.dq, &g.dq)?, rte(&p.dt, &g.dt)?)))
        .collect()
}

/// Median with the even-count convention of averaging the two central
/// values. `None` for an empty slice.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// Edges `0, 1, ..., 180` degrees.
pub fn default_bin_edges() -> Vec<f64> {
    (0..=180).map(f64::from).collect()
}

/// Fraction of errors `<= e` for each edge `e`.
pub fn cumulative_histogram(errors: &[f64], edges: &[f64]) -> Result<Vec<f64>, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if edges.is_empty() || edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::InvalidEdges);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(edges.iter().map(|e| sorted.partition_point(|x| x <= e) as f64 / n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairError {
    pub pair_id: String,
    pub method: String,
    pub roe_deg: f64,
    pub rte_deg: f64,
}

/// Pair records for one method, ids `0..n` in manifest order.
pub fn pair_errors(
    method: &str,
    predictions: &[RelativePose],
    ground_truth: &[RelativePose],
) -> Result<Vec<PairError>, EvalError> {
    Ok(evaluate(predictions, ground_truth)?
        .into_iter()
        .enumerate()
        .map(|(i, (r, t))| PairError { pair_id: i.to_string(), method: method.to_string(), roe_deg: r, rte_deg: t })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub count: usize,
    pub median_roe_deg: f64,
    pub median_rte_deg: f64,
    pub roe_cumulative: Vec<f64>,
    pub rte_cumulative: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub records: Vec<PairError>,
    pub bin_edges: Vec<f64>,
    /// In order of first appearance in `records`.
    pub methods: Vec<MethodSummary>,
}

impl ErrorReport {
    pub fn new(records: Vec<PairError>, bin_edges: Vec<f64>) -> Result<Self, EvalError> {
        if records.is_empty() {
            return Err(EvalError::EmptyInput);
        }
        let mut names: Vec<&str> = Vec::new();
        for r in &records {
            if !names.contains(&r.method.as_str()) {
                names.push(&r.method);
            }
        }
        let mut methods = Vec::with_capacity(names.len());
        for name in names {
            let (roes, rtes): (Vec<f64>, Vec<f64>) =
                records.iter().filter(|r| r.method == name).map(|r| (r.roe_deg, r.rte_deg)).unzip();
            methods.push(MethodSummary {
                method: name.to_string(),
                count: roes.len(),
                median_roe_deg: median(&roes).expect("non-empty"),
                median_rte_deg: median(&rtes).expect("non-empty"),
                roe_cumulative: cumulative_histogram(&roes, &bin_edges)?,
                rte_cumulative: cumulative_histogram(&rtes, &bin_edges)?,
            });
        }
        Ok(Self { records, bin_edges, methods })
    }

    /// Merges several reports, recomputing the aggregates over `edges`.
    pub fn combine(reports: &[ErrorReport], edges: Vec<f64>) -> Result<Self, EvalError> {
        Self::new(reports.iter().flat_map(|r| r.records.iter().cloned()).collect(), edges)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self, EvalError> {
        serde_json::from_str(s).map_err(|e| EvalError::Parse { line: e.line(), msg: e.to_string() })
    }

    pub fn save_json(&self, path: &Path) -> Result<(), EvalError> {
        fs::write(path, self.to_json()).map_err(|e| io_err(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self, EvalError> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| io_err(path, e))?)
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &self.records).map_err(|e| io_err(path, e))?;
        fs::write(path, buf).map_err(|e| io_err(path, e))
    }
}

pub const RECORDS_HEADER: &str = "pair_id,method,roe_deg,rte_deg";

/// Per-pair CSV. Floats use Rust's shortest round-trip formatting, so
/// reading the file back gives identical values.
pub fn write_records_csv<W: Write>(mut w: W, records: &[PairError]) -> std::io::Result<()> {
    writeln!(w, "{RECORDS_HEADER}")?;
    for r in records {
        writeln!(w, "{},{},{},{}", csv_field(&r.pair_id), csv_field(&r.method), r.roe_deg, r.rte_deg)?;
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out
}

pub fn read_records_csv<R: BufRead>(reader: R) -> Result<Vec<PairError>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EvalError::Parse { line: i + 1, msg: e.to_string() })?;
        if i == 0 {
            if line.trim() != RECORDS_HEADER {
                return Err(EvalError::Parse { line: 1, msg: format!("expected header {RECORDS_HEADER:?}") });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f = split_csv_line(&line);
        if f.len() != 4 {
            return Err(EvalError::Parse { line: i + 1, msg: format!("expected 4 fields, got {}", f.len()) });
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| EvalError::Parse { line: i + 1, msg: format!("bad number {s:?}") });
        out.push(PairError { pair_id: f[0].clone(), method: f[1].clone(), roe_deg: num(&f[2])?, rte_deg: num(&f[3])? });
    }
    Ok(out)
}

pub const PREDICTIONS_HEADER: &str = "pair_id,qw,qx,qy,qz,tx,ty,tz";

/// Predictions file, one normalized relative pose per pair.
pub fn write_predictions_csv<W: Write>(mut w: W, preds: &[(String, RelativePose)]) -> std::io::Result<()> {
    writeln!(w, "{PREDICTIONS_HEADER}")?;
    for (id, p) in preds {
        let [qw, qx, qy, qz, tx, ty, tz] = p.to_vector();
        writeln!(w, "{},{qw},{qx},{qy},{qz},{tx},{ty},{tz}", csv_field(id))?;
    }
    Ok(())
}

pub fn read_predictions_csv<R: BufRead>(reader: R) -> Result<Vec<(String, RelativePose)>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EvalError::Parse { line: i + 1, msg: e.to_string() })?;
        if i == 0 {
            if line.trim() != PREDICTIONS_HEADER {
                return Err(EvalError::Parse { line: 1, msg: format!("expected header {PREDICTIONS_HEADER:?}") });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f = split_csv_line(&line);
        if f.len() != 8 {
            return Err(EvalError::Parse { line: i + 1, msg: format!("expected 8 fields, got {}", f.len()) });
        }
        let mut v = [0.0; 7];
        for (k, s) in f[1..].iter().enumerate() {
            v[k] = s.parse().map_err(|_| EvalError::Parse { line: i + 1, msg: format!("bad number {s:?}") })?;
        }
        let (dq, dt) = (Quaternion::new(v[0], v[1], v[2], v[3]), Vector3::new(v[4], v[5], v[6]));
        // unit values are kept verbatim so files round-trip bit-exactly
        let pose = if (dq.norm() - 1.0).abs() < 1e-12 && (dt.norm() - 1.0).abs() < 1e-12 {
            RelativePose { dq, dt }
        } else {
            RelativePose::new(dq, dt).map_err(|e| EvalError::Parse { line: i + 1, msg: e.to_string() })?
        };
        out.push((f[0].clone(), pose));
    }
    Ok(out)
}

/// One row of the method comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub count: usize,
    pub median_roe_deg: f64,
    pub median_rte_deg: f64,
}

pub fn summarize(reports: &[ErrorReport]) -> Vec<SummaryRow> {
    reports
        .iter()
        .flat_map(|r| &r.methods)
        .map(|m| SummaryRow {
            method: m.method.clone(),
            count: m.count,
            median_roe_deg: m.median_roe_deg,
            median_rte_deg: m.median_rte_deg,
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(mut w: W, rows: &[SummaryRow]) -> std::io::Result<()> {
    writeln!(w, "method,count,median_roe_deg,median_rte_deg")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", csv_field(&r.method), r.count, r.median_roe_deg, r.median_rte_deg)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Roe,
    Rte,
}

impl Metric {
    fn label(self) -> &'static str {
        match self {
            Metric::Roe => "relative orientation error (deg)",
            Metric::Rte => "relative translation error (deg)",
        }
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#17becf"];
const LEFT: f64 = 60.0;
const TOP: f64 = 20.0;
const PLOT_W: f64 = 540.0;
const PLOT_H: f64 = 300.0;

/// Cumulative curves of `metric`, one polyline per method, on fixed axes
/// 0..180 degrees by 0..1.
pub fn render_svg(report: &ErrorReport, metric: Metric) -> String {
    let x = |e: f64| LEFT + e.clamp(0.0, 180.0) / 180.0 * PLOT_W;
    let y = |v: f64| TOP + (1.0 - v) * PLOT_H;
    let mut s = String::new();
    let (w, h) = (LEFT + PLOT_W + 160.0, TOP + PLOT_H + 50.0);
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
    writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{PLOT_W}" height="{PLOT_H}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for deg in (0..=180).step_by(30) {
        let px = x(deg as f64);
        writeln!(s, r#"<text x="{px:.3}" y="{:.3}" font-size="11" text-anchor="middle">{deg}</text>"#, TOP + PLOT_H + 15.0)
            .unwrap();
    }
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        writeln!(s, r#"<text x="{:.3}" y="{:.3}" font-size="11" text-anchor="end">{v}</text>"#, LEFT - 5.0, y(v) + 4.0)
            .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.3}" y="{:.3}" font-size="12" text-anchor="middle">{}</text>"#,
        LEFT + PLOT_W / 2.0,
        TOP + PLOT_H + 35.0,
        metric.label()
    )
    .unwrap();
    for (i, m) in report.methods.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let series = match metric {
            Metric::Roe => &m.roe_cumulative,
            Metric::Rte => &m.rte_cumulative,
        };
        let pts: Vec<String> =
            report.bin_edges.iter().zip(series).map(|(&e, &v)| format!("{:.3},{:.3}", x(e), y(v))).collect();
        writeln!(
            s,
            r#"<polyline data-method="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            xml_escape(&m.method),
            pts.join(" ")
        )
        .unwrap();
        let ly = TOP + 15.0 + 18.0 * i as f64;
        writeln!(
            s,
            r#"<text x="{:.3}" y="{ly:.3}" font-size="12" fill="{color}">{}</text>"#,
            LEFT + PLOT_W + 10.0,
            xml_escape(&m.method)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn plot_cumulative(report: &ErrorReport, metric: Metric, path: &Path) -> Result<(), EvalError> {
    fs::write(path, render_svg(report, metric)).map_err(|e| io_err(path, e))
}
