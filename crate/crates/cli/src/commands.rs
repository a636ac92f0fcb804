use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use afl_core::metrics::{self, ExportFormat, MetricsLog};
use afl_core::orchestrator::{self, ExperimentConfig, Mode, TrainingTrace};
use afl_core::theory::report::export_reports;
use afl_core::theory::suites::{run_suite, Suite};
use afl_core::AflError;
use rayon::prelude::*;

use crate::manifest::{now_unix, RunManifest};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Divergence(String),
    Verification(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Verification(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Divergence(m) => write!(f, "diverged: {m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<AflError> for CliError {
    fn from(e: AflError) -> Self {
        match e {
            AflError::Divergence { .. } => CliError::Divergence(e.to_string()),
            AflError::Io { .. } | AflError::Format { .. } => CliError::Io(e.to_string()),
            AflError::InvalidArgument(_)
            | AflError::PartitionInfeasible(_)
            | AflError::RedrawBudgetExhausted(_)
            | AflError::StepSizeTooLarge { .. }
            | AflError::MissingPower(_)
            | AflError::DimensionMismatch { .. } => CliError::Config(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

pub type CliResult<T = ()> = Result<T, CliError>;

/// Metric files, plot data and optional SVGs of one finished run.
fn write_run(cfg: &ExperimentConfig, trace: &TrainingTrace, dir: &Path, render: bool) -> CliResult<MetricsLog> {
    let log = MetricsLog::from_trace(trace, &cfg.power_map())?;
    metrics::export_metrics(&log, dir, ExportFormat::Csv)?;
    metrics::export_metrics(&log, dir, ExportFormat::Json)?;
    let plots = dir.join("plots");
    metrics::export_plot_data(&log, &plots)?;
    if render {
        for (name, series) in log.plot_series() {
            let path = plots.join(format!("{name}.svg"));
            fs::write(&path, metrics::render_svg(name, &[(name, &series)])).map_err(io_err(&path))?;
        }
    }
    Ok(log)
}

fn run_one(cfg: &ExperimentConfig) -> CliResult<TrainingTrace> {
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(orchestrator::run(cfg)?)
}

pub fn cmd_run(cfg: &ExperimentConfig, out: &Path, render: bool) -> CliResult {
    let started = now_unix();
    let trace = run_one(cfg)?;
    let log = write_run(cfg, &trace, out, render)?;
    RunManifest::new("run", cfg, out, vec![cfg.seed], started)
        .write(out)
        .map_err(io_err(out))?;
    println!(
        "{} rounds, final server loss {:.6e}, metrics in {}",
        log.len(),
        log.server_losses.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn label(f: f64) -> String {
    format!("{f:?}")
}

/// Per-round mean of the server loss over several logs of equal length.
pub fn mean_curve(logs: &[&MetricsLog]) -> Vec<f64> {
    let rounds = logs.first().map_or(0, |l| l.len());
    (0..rounds)
        .map(|r| logs.iter().map(|l| l.server_losses[r]).sum::<f64>() / logs.len() as f64)
        .collect()
}

fn write_table(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> CliResult {
    let mut text = header.join(",");
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn cmd_sweep(base: &ExperimentConfig, fractions: &[f64], seeds: &[u64], out: &Path, render: bool) -> CliResult {
    if fractions.is_empty() || seeds.is_empty() {
        return Err(CliError::Config("sweep needs at least one fraction and one seed".into()));
    }
    let started = now_unix();
    let jobs: Vec<(f64, u64)> = fractions.iter().flat_map(|&f| seeds.iter().map(move |&s| (f, s))).collect();
    for &(f, s) in &jobs {
        ExperimentConfig { fraction: f, seed: s, ..base.clone() }
            .validate()
            .map_err(|e| CliError::Config(format!("fraction {f}: {e}")))?;
    }
    let logs: Vec<MetricsLog> = jobs
        .par_iter()
        .map(|&(f, s)| {
            let cfg = ExperimentConfig { fraction: f, seed: s, ..base.clone() };
            let trace = run_one(&cfg)?;
            let dir = out.join("runs").join(format!("fraction-{}", label(f))).join(format!("seed-{s}"));
            write_run(&cfg, &trace, &dir, false)
        })
        .collect::<CliResult<_>>()?;

    let mut curves: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (k, &f) in fractions.iter().enumerate() {
        let group: Vec<&MetricsLog> = jobs
            .iter()
            .zip(&logs)
            .filter(|((jf, _), _)| *jf == f)
            .map(|(_, l)| l)
            .collect();
        curves.insert(k, mean_curve(&group));
    }
    let rows = fractions.iter().enumerate().flat_map(|(k, &f)| {
        curves[&k]
            .iter()
            .enumerate()
            .map(move |(r, v)| vec![label(f), (r + 1).to_string(), format!("{v:?}")])
            .collect::<Vec<_>>()
    });
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_table(&out.join("aggregate.csv"), &["fraction", "round", "mean_server_loss"], rows)?;

    let plots = out.join("plots");
    fs::create_dir_all(&plots).map_err(io_err(&plots))?;
    let mut named = Vec::new();
    for (k, &f) in fractions.iter().enumerate() {
        let series: Vec<(f64, f64)> = curves[&k].iter().enumerate().map(|(r, v)| ((r + 1) as f64, *v)).collect();
        let path = plots.join(format!("mean_loss_fraction_{}.csv", label(f)));
        metrics::write_xy(&path, "round", "mean_server_loss", &series)?;
        named.push((format!("fraction {}", label(f)), series));
    }
    if render {
        let refs: Vec<(&str, &[(f64, f64)])> = named.iter().map(|(n, s)| (n.as_str(), s.as_slice())).collect();
        let path = plots.join("sweep.svg");
        fs::write(&path, metrics::render_svg("mean server loss by client fraction", &refs)).map_err(io_err(&path))?;
    }
    let mut manifest = RunManifest::new("sweep", base, out, seeds.to_vec(), started);
    manifest.fractions = fractions.to_vec();
    manifest.write(out).map_err(io_err(out))?;
    println!("{} runs, aggregate in {}", jobs.len(), out.join("aggregate.csv").display());
    Ok(())
}

pub fn cmd_compare(base: &ExperimentConfig, seeds: &[u64], out: &Path, render: bool) -> CliResult {
    if seeds.is_empty() {
        return Err(CliError::Config("compare needs at least one seed".into()));
    }
    base.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let started = now_unix();
    let jobs: Vec<(Mode, u64)> = [Mode::Afl, Mode::Sync]
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let logs: Vec<MetricsLog> = jobs
        .par_iter()
        .map(|&(mode, s)| {
            let cfg = ExperimentConfig { mode, seed: s, ..base.clone() };
            let trace = run_one(&cfg)?;
            let name = if mode == Mode::Afl { "afl" } else { "sync" };
            write_run(&cfg, &trace, &out.join(name).join(format!("seed-{s}")), false)
        })
        .collect::<CliResult<_>>()?;
    let (afl, sync): (Vec<_>, Vec<_>) = jobs.iter().zip(&logs).partition(|((m, _), _)| *m == Mode::Afl);
    let afl_mean = mean_curve(&afl.iter().map(|(_, l)| *l).collect::<Vec<_>>());
    let sync_mean = mean_curve(&sync.iter().map(|(_, l)| *l).collect::<Vec<_>>());
    let diff: Vec<f64> = afl_mean.iter().zip(&sync_mean).map(|(a, s)| a - s).collect();

    fs::create_dir_all(out).map_err(io_err(out))?;
    let rows = (0..afl_mean.len()).map(|r| {
        vec![
            (r + 1).to_string(),
            format!("{:?}", afl_mean[r]),
            format!("{:?}", sync_mean[r]),
            format!("{:?}", diff[r]),
        ]
    });
    write_table(&out.join("compare.csv"), &["round", "afl_mean_loss", "sync_mean_loss", "difference"], rows)?;
    let plots = out.join("plots");
    fs::create_dir_all(&plots).map_err(io_err(&plots))?;
    let xy = |v: &[f64]| -> Vec<(f64, f64)> { v.iter().enumerate().map(|(r, y)| ((r + 1) as f64, *y)).collect() };
    let (a, s, d) = (xy(&afl_mean), xy(&sync_mean), xy(&diff));
    metrics::write_xy(&plots.join("afl_mean_loss.csv"), "round", "afl_mean_loss", &a)?;
    metrics::write_xy(&plots.join("sync_mean_loss.csv"), "round", "sync_mean_loss", &s)?;
    metrics::write_xy(&plots.join("difference.csv"), "round", "difference", &d)?;
    if render {
        let path = plots.join("compare.svg");
        let svg = metrics::render_svg("mean server loss", &[("afl", &a), ("sync", &s)]);
        fs::write(&path, svg).map_err(io_err(&path))?;
    }
    RunManifest::new("compare", base, out, seeds.to_vec(), started)
        .write(out)
        .map_err(io_err(out))?;
    println!("{} paired runs, curves in {}", seeds.len(), out.join("compare.csv").display());
    Ok(())
}

pub fn cmd_verify(suite: &str, out: &Path, seed: u64) -> CliResult {
    let suite: Suite = suite.parse().map_err(|e: AflError| CliError::Config(e.to_string()))?;
    let reports = run_suite(suite, seed)?;
    for r in &reports {
        println!("{}", r.summary());
    }
    let path: PathBuf = out.join("verification.json");
    export_reports(&reports, &path)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        println!("{} checks passed", reports.len());
        Ok(())
    } else {
        Err(CliError::Verification(failed.join(", ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_curve_averages_per_round() {
        let mk = |v: Vec<f64>| MetricsLog {
            rounds: (1..=v.len()).collect(),
            server_losses: v.clone(),
            tau_t: v.clone(),
            gamma_t: v.clone(),
            max_delays: v.clone(),
            cum_wall_clock: v.clone(),
            energy_proxy: v,
            powers: BTreeMap::new(),
        };
        let a = mk(vec![1.0, 2.0]);
        let b = mk(vec![3.0, 6.0]);
        assert_eq!(mean_curve(&[&a, &b]), vec![2.0, 4.0]);
        assert_eq!(mean_curve(&[&a]), vec![1.0, 2.0]);
    }

    #[test]
    fn error_mapping() {
        let d = AflError::Divergence { round: Some(1), client: None, step: 2, detail: "x".into() };
        assert_eq!(CliError::from(d).exit_code(), 3);
        assert_eq!(CliError::from(AflError::InvalidArgument("x".into())).exit_code(), 2);
    }
}
