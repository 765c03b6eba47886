//! Command-line arguments, the TOML config file and the validated run
//! configuration.
//!
//! Every bench setting resolves as: command-line flag, then config file,
//! then built-in default.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use viscodpg::adapt::{Strategy, DEFAULT_PENALTY_WEIGHT};
use viscodpg::bench::BenchConfig;
use viscodpg::mesh::BenchGeometry;
use viscodpg::spaces::PolyOrders;
use viscodpg::Model;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "viscodpg", version, about = "DPG solver for viscoelastic flow past a confined cylinder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Adaptive cylinder benchmark, single point or sweep over Wi, Re and alpha
    Bench(BenchArgs),
    /// Manufactured-solution convergence study on the unit square
    Mms(MmsArgs),
    /// Property suites with a pass/fail summary
    Check(CheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CouplingArg {
    Stokes,
    NavierStokes,
}

#[derive(Debug, Default, Args)]
pub struct BenchArgs {
    /// TOML config file; flags given on the command line take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// constitutive model: oldroyd_b or giesekus
    #[arg(long)]
    pub model: Option<Model>,
    /// stokes rejects a nonzero Re; navier_stokes requires one
    #[arg(long, value_enum)]
    pub coupling: Option<CouplingArg>,
    /// Weissenberg numbers, comma separated
    #[arg(long, value_delimiter = ',')]
    pub wi: Option<Vec<f64>>,
    /// Reynolds numbers, comma separated
    #[arg(long, value_delimiter = ',')]
    pub re: Option<Vec<f64>>,
    /// Giesekus mobility parameters, comma separated
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    /// viscosity ratio eta_S / eta
    #[arg(long)]
    pub beta: Option<f64>,
    /// trial polynomial order
    #[arg(long)]
    pub p: Option<usize>,
    /// test space enrichment
    #[arg(long)]
    pub dp: Option<usize>,
    /// marking fraction of the largest indicator
    #[arg(long)]
    pub theta: Option<f64>,
    /// marking strategy: energy, adhoc1 or adhoc2
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// number of refinements after the initial mesh
    #[arg(long)]
    pub max_refs: Option<usize>,
    /// meshes with more free unknowns are not solved
    #[arg(long)]
    pub dof_budget: Option<usize>,
    /// vertex distance from the cylinder marked by adhoc2
    #[arg(long)]
    pub band: Option<f64>,
    /// penalize T12 on the symmetry line, optionally with a weight
    #[arg(long, num_args = 0..=1, default_missing_value = "100")]
    pub penalty: Option<f64>,
    /// relative field increment at which Newton stops
    #[arg(long)]
    pub newton_tol: Option<f64>,
    /// Newton steps per mesh
    #[arg(long)]
    pub newton_max_iter: Option<usize>,
    /// Newton step length in (0, 1]
    #[arg(long)]
    pub damping: Option<f64>,
    /// cylinder radius
    #[arg(long)]
    pub radius: Option<f64>,
    /// channel half height
    #[arg(long)]
    pub half_height: Option<f64>,
    /// channel length upstream of the cylinder centre
    #[arg(long)]
    pub upstream: Option<f64>,
    /// channel length downstream of the cylinder centre
    #[arg(long)]
    pub downstream: Option<f64>,
    /// write a VTK file per solved mesh
    #[arg(long)]
    pub vtk: bool,
    /// points sampled along the cylinder and the wake line
    #[arg(long)]
    pub gamma_samples: Option<usize>,
    /// recorded in run_config.toml; the benchmark itself is deterministic
    #[arg(long)]
    pub seed: Option<u64>,
    /// sweep points solved concurrently
    #[arg(long)]
    pub jobs: Option<usize>,
    /// output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MmsCase {
    /// smooth Stokes flow, used for convergence rates
    Smooth,
    /// polynomial Newtonian flow contained in the trial space
    Polynomial,
}

#[derive(Debug, Args)]
pub struct MmsArgs {
    #[arg(long, value_enum, default_value = "smooth")]
    pub case: MmsCase,
    /// uniform refinements after the initial mesh
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    /// elements per side of the initial mesh
    #[arg(long, default_value_t = 2)]
    pub n0: usize,
    #[arg(long, default_value_t = 2)]
    pub p: usize,
    #[arg(long, default_value_t = 2)]
    pub dp: usize,
    #[arg(long, default_value_t = 0.59)]
    pub beta: f64,
    /// directory for mms.csv
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Bench settings as read from a TOML file. All keys are optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<Model>,
    pub coupling: Option<CouplingArg>,
    pub wi: Option<Vec<f64>>,
    pub re: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
    pub beta: Option<f64>,
    pub p: Option<usize>,
    pub dp: Option<usize>,
    pub theta: Option<f64>,
    pub strategy: Option<Strategy>,
    pub max_refs: Option<usize>,
    pub dof_budget: Option<usize>,
    pub band: Option<f64>,
    pub penalty: Option<f64>,
    pub newton_tol: Option<f64>,
    pub newton_max_iter: Option<usize>,
    pub damping: Option<f64>,
    pub radius: Option<f64>,
    pub half_height: Option<f64>,
    pub upstream: Option<f64>,
    pub downstream: Option<f64>,
    pub vtk: Option<bool>,
    pub gamma_samples: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msgs) => CliError::Config(msgs.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(vec![e.message().to_string()]))
    }
}

/// Fully resolved bench configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: Model,
    pub coupling: CouplingArg,
    pub wi: Vec<f64>,
    pub re: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub p: usize,
    pub dp: usize,
    pub theta: f64,
    pub strategy: Strategy,
    pub max_refs: usize,
    pub dof_budget: usize,
    pub band: f64,
    pub penalty: Option<f64>,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub damping: f64,
    pub radius: f64,
    pub half_height: f64,
    pub upstream: f64,
    pub downstream: f64,
    pub vtk: bool,
    pub gamma_samples: usize,
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
}

/// One point of a sweep with its run directory.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub wi: f64,
    pub re: f64,
    pub alpha: f64,
    pub bench: BenchConfig,
    pub dir: PathBuf,
}

impl RunConfig {
    /// Merges flags over the file over the defaults and validates the result.
    pub fn resolve(args: &BenchArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        Self::merge(args, &file)
    }

    pub fn merge(args: &BenchArgs, file: &FileConfig) -> Result<Self, CliError> {
        let d = BenchConfig::default();
        let g = &d.geometry;
        let a = &d.adapt;
        macro_rules! pick {
            ($field:ident, $default:expr) => {
                args.$field.clone().or_else(|| file.$field.clone()).unwrap_or($default)
            };
        }
        let re = pick!(re, vec![d.re]);
        let coupling_default = if re.iter().any(|&r| r != 0.0) { CouplingArg::NavierStokes } else { CouplingArg::Stokes };
        let cfg = RunConfig {
            model: pick!(model, d.model),
            coupling: pick!(coupling, coupling_default),
            wi: pick!(wi, vec![d.wi]),
            re,
            alpha: pick!(alpha, vec![d.alpha]),
            beta: pick!(beta, d.beta),
            p: pick!(p, a.orders.p),
            dp: pick!(dp, a.orders.dp),
            theta: pick!(theta, a.theta),
            strategy: pick!(strategy, a.strategy),
            max_refs: pick!(max_refs, a.max_refinements),
            dof_budget: pick!(dof_budget, a.dof_budget),
            band: pick!(band, a.cylinder_band),
            penalty: args.penalty.or(file.penalty),
            newton_tol: pick!(newton_tol, d.newton_tol),
            newton_max_iter: pick!(newton_max_iter, d.newton_max_iter),
            damping: pick!(damping, d.damping),
            radius: pick!(radius, g.cylinder_radius),
            half_height: pick!(half_height, g.half_channel_height),
            upstream: pick!(upstream, g.upstream_length),
            downstream: pick!(downstream, g.downstream_length),
            vtk: args.vtk || file.vtk.unwrap_or(d.vtk),
            gamma_samples: pick!(gamma_samples, d.gamma_samples),
            seed: pick!(seed, 0),
            jobs: pick!(jobs, 1),
            out: pick!(out, PathBuf::from("out")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let mut errs = Vec::new();
        for (name, list) in [("wi", &self.wi), ("re", &self.re), ("alpha", &self.alpha)] {
            if list.is_empty() {
                errs.push(format!("{name} list is empty"));
            }
        }
        match self.coupling {
            CouplingArg::Stokes if self.re.iter().any(|&r| r != 0.0) => errs.push("stokes coupling requires re = 0".into()),
            CouplingArg::NavierStokes if self.re.iter().any(|&r| r == 0.0) => errs.push("navier_stokes coupling requires re > 0".into()),
            _ => {}
        }
        if self.model == Model::OldroydB && self.alpha.iter().any(|&a| a != 0.0) {
            errs.push("alpha must be 0 for the oldroyd_b model".into());
        }
        if self.jobs == 0 {
            errs.push("jobs must be at least 1".into());
        }
        for pt in self.points() {
            if let Err(e) = pt.bench.validate() {
                for msg in e.to_string().replace("configuration error: ", "").split("; ") {
                    if !errs.iter().any(|m| m == msg) {
                        errs.push(msg.to_string());
                    }
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(errs))
        }
    }

    /// Bench configuration for one `(Wi, Re, α)` point.
    pub fn bench_config(&self, wi: f64, re: f64, alpha: f64) -> BenchConfig {
        let mut b = BenchConfig { model: self.model, wi, re, alpha, beta: self.beta, ..BenchConfig::default() };
        b.geometry = BenchGeometry {
            cylinder_radius: self.radius,
            half_channel_height: self.half_height,
            upstream_length: self.upstream,
            downstream_length: self.downstream,
            ..b.geometry
        };
        b.adapt.strategy = self.strategy;
        b.adapt.theta = self.theta;
        b.adapt.max_refinements = self.max_refs;
        b.adapt.dof_budget = self.dof_budget;
        b.adapt.cylinder_band = self.band;
        b.adapt.penalty_t12 = self.penalty;
        b.adapt.orders = PolyOrders::new(self.p, self.dp);
        b.newton_tol = self.newton_tol;
        b.newton_max_iter = self.newton_max_iter;
        b.damping = self.damping;
        b.vtk = self.vtk;
        b.gamma_samples = self.gamma_samples;
        b
    }

    pub fn is_sweep(&self) -> bool {
        self.wi.len() * self.re.len() * self.alpha.len() > 1
    }

    /// Sweep points in `Wi`-major order. A single point writes directly into
    /// `out`; sweep points get one subdirectory each.
    pub fn points(&self) -> Vec<SweepPoint> {
        let sweep = self.is_sweep();
        let mut pts = Vec::new();
        for &wi in &self.wi {
            for &re in &self.re {
                for &alpha in &self.alpha {
                    let dir = if sweep { self.out.join(format!("wi{wi}_re{re}_alpha{alpha}")) } else { self.out.clone() };
                    pts.push(SweepPoint { wi, re, alpha, bench: self.bench_config(wi, re, alpha), dir });
                }
            }
        }
        pts
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes to TOML")
    }
}

/// Weight used by `--penalty` without a value.
pub const PENALTY_FLAG_WEIGHT: f64 = DEFAULT_PENALTY_WEIGHT;
