//! Command-line drivers: single runs, comparison grids, and the
//! closed-form load analysis.
//!
//! Logs go to standard error; machine-readable results go to files under
//! `--out` (or to standard output for `analyze`). Grid runs execute in
//! parallel worker threads, one simulation per worker, and outputs are
//! merged in `(protocol, ue_count, seed)` order so identical invocations
//! produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{handoff_load, HandoffLoadQuery};
use crate::metrics::{
    aggregate, write_aggregate_csv, write_reports_json, write_summary_csv, write_time_series_csv,
    MetricsError, RunReport,
};
use crate::scenario::{build_simulation, load_config, ConfigError, Protocol, ScenarioConfig};

#[derive(Debug, Parser)]
#[command(
    name = "ntnsim",
    about = "Discrete-event simulator for LEO satellite handover signaling",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write its report and time series.
    Run(RunArgs),
    /// Sweep both protocols over UE counts and seeds; write the comparison table.
    Compare(CompareArgs),
    /// Evaluate the closed-form handover-load formulas.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML configuration file; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub protocol: Option<Protocol>,
    /// Number of deployed UEs.
    #[arg(long)]
    pub ues: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Simulated end time in ms (default derived from the geometry).
    #[arg(long = "t-end")]
    pub t_end_ms: Option<u64>,
    /// Write a raw event log under <out>/events/.
    #[arg(long)]
    pub event_log: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// UE counts: a comma list (10000,20000) or range (10000..70000:10000).
    #[arg(long)]
    pub ues: String,
    /// Comma list of seeds (default from the config: 10,20,30,40,50).
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Simulated end time in ms (default derived from the geometry).
    #[arg(long = "t-end")]
    pub t_end_ms: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// Cell radius in km.
    #[arg(long)]
    pub radius: f64,
    /// Satellite ground speed in km/s.
    #[arg(long)]
    pub speed: f64,
    /// Connected UEs in the cell.
    #[arg(long)]
    pub ues: f64,
    /// Window in seconds.
    #[arg(long)]
    pub dt: f64,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad flag value: {0}")]
    BadFlag(String),
    #[error("{failed} of {total} grid runs failed")]
    GridFailures { failed: usize, total: usize },
}

fn read_config(path: &Option<PathBuf>) -> Result<ScenarioConfig, CliError> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|source| CliError::Io { path: p.clone(), source })?,
        None => String::new(),
    };
    Ok(load_config(&text)?)
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Execute one simulation for a fully resolved config.
pub fn run_one(cfg: &ScenarioConfig) -> Result<(RunReport, crate::metrics::MetricsLedger), CliError> {
    let mut sim = build_simulation(cfg)?;
    let report = sim.run();
    Ok((report, sim.world.ledger.clone()))
}

fn write_run_outputs(
    out: &Path,
    ledgers: &[crate::metrics::MetricsLedger],
    reports: &[RunReport],
) -> Result<(), CliError> {
    ensure_dir(out)?;
    write_summary_csv(reports, &out.join("summary.csv"))?;
    write_reports_json(reports, &out.join("report.json"))?;
    let ts_dir = out.join("timeseries");
    ensure_dir(&ts_dir)?;
    for ledger in ledgers {
        for sat in 0..ledger.satellite_count {
            let name = format!(
                "{}-{}-{}-sat{}.csv",
                ledger.protocol,
                ledger.ue_count,
                ledger.seed,
                sat + 1
            );
            write_time_series_csv(ledger, sat, &ts_dir.join(name))?;
        }
        if let Some(log) = ledger.event_log() {
            let ev_dir = out.join("events");
            ensure_dir(&ev_dir)?;
            let name = format!("{}-{}-{}.log", ledger.protocol, ledger.ue_count, ledger.seed);
            fs::write(ev_dir.join(&name), log)
                .map_err(|source| CliError::Io { path: ev_dir.join(name), source })?;
        }
    }
    Ok(())
}

pub fn cmd_run(args: &RunArgs) -> Result<RunReport, CliError> {
    let mut cfg = read_config(&args.config)?;
    if let Some(p) = args.protocol {
        cfg.protocol = p;
    }
    if let Some(n) = args.ues {
        cfg.ue_count = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.t_end_ms {
        cfg.t_end_ms = Some(t);
    }
    cfg.event_log |= args.event_log;
    cfg.validate()?;
    log::info!(
        "running {} with {} UEs, seed {}, until {}",
        cfg.protocol,
        cfg.ue_count,
        cfg.seed,
        cfg.t_end()
    );
    let (report, ledger) = run_one(&cfg)?;
    write_run_outputs(&args.out, &[ledger], &[report.clone()])?;
    log::info!(
        "success rate {:.2}%, total messages {}, drop rate {:.2}%",
        report.success_rate_pct,
        report.total_messages,
        report.drop_rate_pct
    );
    Ok(report)
}

/// Parse "10000,20000" or "10000..70000:10000" (inclusive).
pub fn parse_ue_counts(spec: &str) -> Result<Vec<u32>, CliError> {
    let bad = || CliError::BadFlag(format!("cannot parse UE counts from '{spec}'"));
    if let Some((range, step)) = spec.split_once(':') {
        let (lo, hi) = range.split_once("..").ok_or_else(bad)?;
        let lo: u32 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u32 = hi.trim().parse().map_err(|_| bad())?;
        let step: u32 = step.trim().parse().map_err(|_| bad())?;
        if step == 0 || hi < lo {
            return Err(bad());
        }
        Ok((lo..=hi).step_by(step as usize).collect())
    } else {
        spec.split(',')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect()
    }
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>, CliError> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::BadFlag(format!("cannot parse seeds from '{spec}'")))
        })
        .collect()
}

pub fn cmd_compare(args: &CompareArgs) -> Result<Vec<RunReport>, CliError> {
    let base = read_config(&args.config)?;
    let ue_counts = parse_ue_counts(&args.ues)?;
    let seeds = match &args.seeds {
        Some(s) => parse_seeds(s)?,
        None => base.seeds.clone(),
    };
    if ue_counts.is_empty() || seeds.is_empty() {
        return Err(CliError::BadFlag("need at least one UE count and one seed".into()));
    }
    let mut grid = Vec::new();
    for protocol in [Protocol::Ho, Protocol::Gho] {
        for &ue_count in &ue_counts {
            for &seed in &seeds {
                let mut cfg = base.clone();
                cfg.protocol = protocol;
                cfg.ue_count = ue_count;
                cfg.seed = seed;
                if let Some(t) = args.t_end_ms {
                    cfg.t_end_ms = Some(t);
                }
                grid.push(cfg);
            }
        }
    }
    log::info!("comparison grid: {} runs", grid.len());
    let results: Vec<Result<_, CliError>> = grid
        .par_iter()
        .map(|cfg| {
            let out = run_one(cfg);
            if let Ok((report, _)) = &out {
                log::info!(
                    "done {} ues={} seed={}: success {:.2}% drop {:.2}%",
                    cfg.protocol,
                    cfg.ue_count,
                    cfg.seed,
                    report.success_rate_pct,
                    report.drop_rate_pct
                );
            }
            out
        })
        .collect();

    let total = results.len();
    let mut reports = Vec::new();
    let mut ledgers = Vec::new();
    let mut failed = 0usize;
    for r in results {
        match r {
            Ok((report, ledger)) => {
                reports.push(report);
                ledgers.push(ledger);
            }
            Err(e) => {
                failed += 1;
                log::error!("grid run failed: {e}");
            }
        }
    }
    write_run_outputs(&args.out, &ledgers, &reports)?;
    write_aggregate_csv(&aggregate(&reports), &args.out.join("aggregate.csv"))?;
    if failed > 0 {
        return Err(CliError::GridFailures { failed, total });
    }
    Ok(reports)
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<String, CliError> {
    let q = HandoffLoadQuery {
        ue_count: args.ues,
        cell_radius: args.radius,
        satellite_speed: args.speed,
        window: args.dt,
    };
    let load = handoff_load(&q).map_err(|e| CliError::BadFlag(e.to_string()))?;
    Ok(format!(
        "A_circle_km2 {:.6}\nA_intersect_km2 {:.6}\nA_handoff_km2 {:.6}\n\
         density_ue_per_km2 {:.6}\nN_handoff {:.3}\n",
        load.cell_area_km2,
        load.intersect_area_km2,
        load.handoff_area_km2,
        load.density_per_km2,
        load.expected_handoffs
    ))
}

/// Dispatch a parsed invocation. Returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args).map(|_| String::new()),
        Command::Compare(args) => cmd_compare(&args).map(|_| String::new()),
        Command::Analyze(args) => cmd_analyze(&args),
    };
    match result {
        Ok(stdout) => {
            print!("{stdout}");
            0
        }
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            1
        }
    }
}
