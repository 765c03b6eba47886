//! Command-line front end: parses and validates a run configuration, then
//! drives the benchmark, the manufactured-solution study or the property
//! suites.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver failure,
//! 4 property-suite failure.

pub mod config;

use std::io::Write;
use std::path::Path;

use clap::Parser;
use thiserror::Error;
use viscodpg::adapt::StopReason;
use viscodpg::bench::{run_benchmark, BenchOutcome};
use viscodpg::mms::{convergence_study, newtonian_polynomial, observed_rates, smooth_stokes};
use viscodpg::spaces::PolyOrders;

use config::{Cli, Command, MmsArgs, MmsCase, RunConfig, SweepPoint};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("{failed} of {total} property suites failed")]
    Property { failed: usize, total: usize },
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) | CliError::Io(_) => 3,
            CliError::Property { .. } => 4,
        }
    }
}

impl From<viscodpg::Error> for CliError {
    fn from(e: viscodpg::Error) -> Self {
        match e {
            viscodpg::Error::Config(msg) => CliError::Config(msg.split("; ").map(str::to_string).collect()),
            viscodpg::Error::Io(e) => CliError::Io(e),
            other => CliError::Solver(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code. Diagnostics go to stderr.
pub fn main_with_args<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Bench(args) => run_bench(&RunConfig::resolve(&args)?).map(|_| ()),
        Command::Mms(args) => run_mms(&args).map(|_| ()),
        Command::Check(args) => run_check(args.seed),
    }
}

/// Final state of one sweep point.
#[derive(Debug, serde::Serialize)]
pub struct PointSummary {
    pub wi: f64,
    pub re: f64,
    pub alpha: f64,
    pub meshes: usize,
    pub dof: usize,
    pub drag_flux: f64,
    pub drag_field: f64,
    pub drag_err: f64,
    pub energy_err: f64,
    pub stop: String,
}

fn stop_label(stop: &StopReason) -> String {
    match stop {
        StopReason::MaxRefinements => "max_refinements".into(),
        StopReason::DofBudget => "dof_budget".into(),
        StopReason::Diverged => "diverged".into(),
        StopReason::SolverFailure(msg) => format!("solver_failure: {msg}"),
    }
}

fn summarize(pt: &SweepPoint, out: &BenchOutcome) -> PointSummary {
    let last = out.run.records.last();
    PointSummary {
        wi: pt.wi,
        re: pt.re,
        alpha: pt.alpha,
        meshes: out.run.records.len(),
        dof: last.map_or(0, |r| r.dof),
        drag_flux: last.map_or(f64::NAN, |r| r.drag_flux),
        drag_field: last.map_or(f64::NAN, |r| r.drag_field),
        drag_err: last.map_or(f64::NAN, |r| r.drag_err),
        energy_err: last.map_or(f64::NAN, |r| r.energy_err),
        stop: stop_label(&out.run.stop),
    }
}

fn run_point(pt: &SweepPoint) -> Result<PointSummary, CliError> {
    let out = run_benchmark(&pt.bench, Some(&pt.dir))?;
    for r in &out.run.records {
        eprintln!(
            "[wi={} re={} alpha={}] ref {:2} dof {:7} drag {:.6} err {:.3e} eta {:.3e} newton {} quadratic {}",
            pt.wi, pt.re, pt.alpha, r.ref_index, r.dof, r.drag_flux, r.drag_err, r.energy_err, r.newton_iters, r.quadratic
        );
    }
    Ok(summarize(pt, &out))
}

/// Runs every sweep point, echoes the resolved configuration into `out`
/// and writes `sweep.csv` for sweeps. Points that fail keep their partial
/// output; the first failure is reported after all points have run.
pub fn run_bench(cfg: &RunConfig) -> Result<Vec<PointSummary>, CliError> {
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("run_config.toml"), cfg.to_toml())?;
    let points = cfg.points();
    let results: Vec<Result<PointSummary, CliError>> = if cfg.jobs > 1 && points.len() > 1 {
        let chunks: Vec<&[SweepPoint]> = points.chunks(points.len().div_ceil(cfg.jobs)).collect();
        std::thread::scope(|s| {
            let handles: Vec<_> = chunks.iter().map(|chunk| s.spawn(move || chunk.iter().map(run_point).collect::<Vec<_>>())).collect();
            handles.into_iter().flat_map(|h| h.join().expect("sweep worker panicked")).collect()
        })
    } else {
        points.iter().map(run_point).collect()
    };
    let mut summaries = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(s) => summaries.push(s),
            Err(e) => {
                eprintln!("error: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    if cfg.is_sweep() {
        let mut w = csv::Writer::from_path(cfg.out.join("sweep.csv"))?;
        for s in &summaries {
            w.serialize(s)?;
        }
        w.flush()?;
    }
    let stdout = std::io::stdout();
    let mut o = stdout.lock();
    writeln!(o, "{:>6} {:>6} {:>6} {:>8} {:>12} {:>12} {:>10}  stop", "wi", "re", "alpha", "dof", "drag_flux", "drag_field", "drag_err")?;
    for s in &summaries {
        writeln!(
            o,
            "{:>6} {:>6} {:>6} {:>8} {:>12.6} {:>12.6} {:>10.3e}  {}",
            s.wi, s.re, s.alpha, s.dof, s.drag_flux, s.drag_field, s.drag_err, s.stop
        )?;
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    if let Some(s) = summaries.iter().find(|s| s.stop.starts_with("solver_failure") || s.stop == "diverged") {
        return Err(CliError::Solver(format!("wi={} re={} alpha={}: {}", s.wi, s.re, s.alpha, s.stop)));
    }
    Ok(summaries)
}

/// One row of `mms.csv`.
#[derive(Debug, serde::Serialize)]
pub struct MmsRow {
    pub level: usize,
    pub elements: usize,
    pub h: f64,
    pub dof: usize,
    pub relative_error: f64,
    pub rate: Option<f64>,
    pub newton_iters: usize,
}

pub fn run_mms(args: &MmsArgs) -> Result<Vec<MmsRow>, CliError> {
    let mut errs = Vec::new();
    if args.n0 == 0 {
        errs.push("n0 must be at least 1".to_string());
    }
    if !(args.beta > 0.0 && args.beta < 1.0) {
        errs.push(format!("beta must lie in (0, 1) (got {})", args.beta));
    }
    let orders = PolyOrders::new(args.p, args.dp);
    if let Err(e) = orders.validate() {
        errs.push(e);
    }
    if !errs.is_empty() {
        return Err(CliError::Config(errs));
    }
    let case = match args.case {
        MmsCase::Smooth => smooth_stokes(args.beta),
        MmsCase::Polynomial => newtonian_polynomial(args.beta),
    };
    let levels = convergence_study(&case, args.n0, args.levels, orders)?;
    let rates = observed_rates(&levels);
    let rows: Vec<MmsRow> = levels
        .iter()
        .enumerate()
        .map(|(i, l)| MmsRow {
            level: i,
            elements: l.elements,
            h: l.h,
            dof: l.dof,
            relative_error: l.relative,
            rate: i.checked_sub(1).map(|j| rates[j]),
            newton_iters: l.newton_iters,
        })
        .collect();
    let stdout = std::io::stdout();
    let mut o = stdout.lock();
    writeln!(o, "{} (p={}, dp={})", case.name, args.p, args.dp)?;
    writeln!(o, "{:>5} {:>8} {:>10} {:>8} {:>12} {:>6}", "level", "elements", "h", "dof", "rel_error", "rate")?;
    for r in &rows {
        let rate = r.rate.map_or("-".to_string(), |v| format!("{v:.2}"));
        writeln!(o, "{:>5} {:>8} {:>10.4e} {:>8} {:>12.4e} {:>6}", r.level, r.elements, r.h, r.dof, r.relative_error, rate)?;
    }
    if let Some(dir) = &args.out {
        write_csv(&dir.join("mms.csv"), &rows)?;
    }
    Ok(rows)
}

fn write_csv<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_check(seed: u64) -> Result<(), CliError> {
    let outcomes = viscodpg::checks::run_all(seed);
    let stdout = std::io::stdout();
    let mut o = stdout.lock();
    for c in &outcomes {
        writeln!(o, "{} {:<22} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
    }
    let failed = outcomes.iter().filter(|c| !c.passed).count();
    writeln!(o, "{} of {} suites passed", outcomes.len() - failed, outcomes.len())?;
    if failed > 0 {
        return Err(CliError::Property { failed, total: outcomes.len() });
    }
    Ok(())
}
