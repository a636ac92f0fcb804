//! Per-round metrics derived from a training trace, and their file formats.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{AflError, Result};
use crate::model::ModelKind;
use crate::orchestrator::TrainingTrace;
use crate::params::{ParamVector, RoundRecord};

pub const CSV_HEADER: [&str; 7] = [
    "round",
    "server_loss",
    "tau_t",
    "gamma_t",
    "max_delay",
    "cum_wall_clock",
    "energy_proxy",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl ExportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ExportFormat::Csv => "metrics.csv",
            ExportFormat::Json => "metrics.json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub rounds: Vec<usize>,
    pub server_losses: Vec<f64>,
    pub tau_t: Vec<f64>,
    pub gamma_t: Vec<f64>,
    pub max_delays: Vec<f64>,
    pub cum_wall_clock: Vec<f64>,
    pub energy_proxy: Vec<f64>,
    pub powers: BTreeMap<usize, f64>,
}

impl MetricsLog {
    pub fn from_records(records: &[RoundRecord], powers: &BTreeMap<usize, f64>) -> Result<Self> {
        Ok(Self {
            rounds: records.iter().map(|r| r.round).collect(),
            server_losses: records.iter().map(|r| r.server_loss).collect(),
            tau_t: records.iter().map(|r| r.tau_t).collect(),
            gamma_t: records.iter().map(|r| r.gamma_t).collect(),
            max_delays: records.iter().map(RoundRecord::max_delay).collect(),
            cum_wall_clock: cumulative_wall_clock(records),
            energy_proxy: energy_proxy(records, powers)?,
            powers: powers.clone(),
        })
    }

    pub fn from_trace(trace: &TrainingTrace, powers: &BTreeMap<usize, f64>) -> Result<Self> {
        Self::from_records(&trace.records, powers)
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// Named `(x, y)` series, one per figure.
    pub fn plot_series(&self) -> Vec<(&'static str, Vec<(f64, f64)>)> {
        let xs: Vec<f64> = self.rounds.iter().map(|&r| r as f64).collect();
        let pair = |ys: &[f64]| xs.iter().copied().zip(ys.iter().copied()).collect();
        vec![
            ("server_loss", pair(&self.server_losses)),
            ("max_delay", pair(&self.max_delays)),
            ("cum_wall_clock", pair(&self.cum_wall_clock)),
            ("energy_proxy", pair(&self.energy_proxy)),
        ]
    }
}

/// Mean per-sample loss of `p` over `data`.
pub fn server_loss(p: &ParamVector, data: &Dataset, kind: &ModelKind) -> Result<f64> {
    if data.is_empty() {
        return Err(AflError::InvalidArgument("empty evaluation set".into()));
    }
    kind.mean_loss(p, data)
}

/// Prefix sums of the per-round delay spreads.
pub fn cumulative_wall_clock(records: &[RoundRecord]) -> Vec<f64> {
    records
        .iter()
        .scan(0.0, |acc, r| {
            *acc += r.tau_t;
            Some(*acc)
        })
        .collect()
}

/// Prefix sums of `sum_c P_c * delay_c` over each round's participants.
pub fn energy_proxy(records: &[RoundRecord], powers: &BTreeMap<usize, f64>) -> Result<Vec<f64>> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        for (&c, &delay) in &r.delays {
            let watts = powers.get(&c).ok_or(AflError::MissingPower(c))?;
            acc += watts * delay;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Writes `metrics.csv` or `metrics.json` into `dir`, creating it if needed.
pub fn export_metrics(log: &MetricsLog, dir: &Path, format: ExportFormat) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| AflError::io(dir, e))?;
    let path = dir.join(format.file_name());
    match format {
        ExportFormat::Csv => write_csv(log, &path)?,
        ExportFormat::Json => {
            let text = serde_json::to_string_pretty(log)
                .map_err(|e| AflError::format(&path, e.to_string()))?;
            fs::write(&path, text).map_err(|e| AflError::io(&path, e))?;
        }
    }
    Ok(path)
}

fn write_csv(log: &MetricsLog, path: &Path) -> Result<()> {
    let csv_err = |e: csv::Error| AflError::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for i in 0..log.len() {
        // `{:?}` is the shortest representation that parses back exactly
        w.write_record([
            log.rounds[i].to_string(),
            format!("{:?}", log.server_losses[i]),
            format!("{:?}", log.tau_t[i]),
            format!("{:?}", log.gamma_t[i]),
            format!("{:?}", log.max_delays[i]),
            format!("{:?}", log.cum_wall_clock[i]),
            format!("{:?}", log.energy_proxy[i]),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| AflError::io(path, e))
}

/// Reads a metrics CSV. Power ratings are not part of the CSV schema and
/// come back empty.
pub fn import_metrics_csv(path: &Path) -> Result<MetricsLog> {
    let csv_err = |e: csv::Error| AflError::format(path, e.to_string());
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(AflError::format(path, format!("unexpected header {header:?}")));
    }
    let mut log = MetricsLog {
        rounds: vec![],
        server_losses: vec![],
        tau_t: vec![],
        gamma_t: vec![],
        max_delays: vec![],
        cum_wall_clock: vec![],
        energy_proxy: vec![],
        powers: BTreeMap::new(),
    };
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |field: &str| AflError::format(path, format!("row {}: bad {field}", line + 2));
        let num = |i: usize| -> Result<f64> { rec[i].parse().map_err(|_| bad(CSV_HEADER[i])) };
        log.rounds.push(rec[0].parse().map_err(|_| bad("round"))?);
        log.server_losses.push(num(1)?);
        log.tau_t.push(num(2)?);
        log.gamma_t.push(num(3)?);
        log.max_delays.push(num(4)?);
        log.cum_wall_clock.push(num(5)?);
        log.energy_proxy.push(num(6)?);
    }
    Ok(log)
}

pub fn import_metrics_json(path: &Path) -> Result<MetricsLog> {
    let text = fs::read_to_string(path).map_err(|e| AflError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AflError::format(path, e.to_string()))
}

/// Writes one two-column `x,y` CSV per figure into `dir`.
pub fn export_plot_data(log: &MetricsLog, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| AflError::io(dir, e))?;
    let mut paths = Vec::new();
    for (name, series) in log.plot_series() {
        let path = dir.join(format!("{name}.csv"));
        write_xy(&path, "round", name, &series)?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn write_xy(path: &Path, x_name: &str, y_name: &str, series: &[(f64, f64)]) -> Result<()> {
    let csv_err = |e: csv::Error| AflError::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([x_name, y_name]).map_err(csv_err)?;
    for (x, y) in series {
        w.write_record([format!("{x:?}"), format!("{y:?}")])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| AflError::io(path, e))
}

/// Minimal SVG line chart; one polyline per labelled series.
pub fn render_svg(title: &str, series: &[(&str, &[(f64, f64)])]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

    let points = series.iter().flat_map(|(_, s)| s.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<path d="M{PAD},{PAD} V{} H{}" stroke="black" fill="none"/>"#,
        H - PAD,
        W - PAD
    );
    let _ = writeln!(svg, r#"<text x="{PAD}" y="{}">{x0:.4}</text>"#, H - PAD + 15.0);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end">{x1:.4}</text>"#,
        W - PAD,
        H - PAD + 15.0
    );
    let _ = writeln!(svg, r#"<text x="4" y="{}">{y0:.4}</text>"#, H - PAD);
    let _ = writeln!(svg, r#"<text x="4" y="{}">{y1:.4}</text>"#, PAD);
    for (k, (label, s)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = s
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" stroke="{color}" fill="none"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - PAD - 120.0,
            PAD + 15.0 * (k as f64 + 1.0),
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
