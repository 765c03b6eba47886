//! Marking strategies and the solve, estimate, mark and refine loop.

use std::time::Instant;

use crate::bench::{bench_conditions, drag_estimates};
use crate::dpg::{DiscreteState, DofMap};
use crate::error::{Error, Result};
use crate::forms::Kernels;
use crate::mesh::{BenchGeometry, EdgeTag, Mesh};
use crate::nonlinear::{gauss_newton, NewtonConfig, QuadraticVerdict};
use crate::params::ModelParams;
use crate::spaces::PolyOrders;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// energy indicators only
    Energy,
    /// energy marks plus every element touching the cylinder
    Adhoc1,
    /// energy marks plus every element with a vertex near the cylinder
    Adhoc2,
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "energy" => Ok(Strategy::Energy),
            "adhoc1" => Ok(Strategy::Adhoc1),
            "adhoc2" => Ok(Strategy::Adhoc2),
            other => Err(format!("unknown strategy `{other}` (expected energy, adhoc1 or adhoc2)")),
        }
    }
}

/// Weight of the `T12 = 0` rows when the penalty is switched on without an
/// explicit weight.
pub const DEFAULT_PENALTY_WEIGHT: f64 = 100.0;

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct AdaptConfig {
    pub strategy: Strategy,
    pub theta: f64,
    pub max_refinements: usize,
    /// meshes with more free unknowns than this are not solved
    pub dof_budget: usize,
    pub cylinder_band: f64,
    /// weight of the `T12 = 0` rows on the symmetry line
    pub penalty_t12: Option<f64>,
    pub orders: PolyOrders,
    #[serde(skip)]
    pub newton: NewtonConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Energy,
            theta: 0.2,
            max_refinements: 50,
            dof_budget: 400_000,
            cylinder_band: 0.1,
            penalty_t12: None,
            orders: PolyOrders::new(2, 2),
            newton: NewtonConfig::default(),
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.theta > 0.0 && self.theta < 1.0) {
            errs.push(format!("theta must lie in (0, 1) (got {})", self.theta));
        }
        if !(self.cylinder_band >= 0.0) {
            errs.push(format!("cylinder band must be non-negative (got {})", self.cylinder_band));
        }
        if let Some(w) = self.penalty_t12 {
            if !(w >= 0.0) {
                errs.push(format!("penalty weight must be non-negative (got {w})"));
            }
        }
        if let Err(e) = self.orders.validate() {
            errs.push(e);
        }
        if !(self.newton.tol > 0.0) || self.newton.max_iter == 0 {
            errs.push("newton tolerance must be positive and max_iter at least 1".into());
        }
        if !(self.newton.damping > 0.0 && self.newton.damping <= 1.0) {
            errs.push(format!("damping must lie in (0, 1] (got {})", self.newton.damping));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }
}

/// Indices `K` with `η_K >= θ max η`.
pub fn mark_energy(eta: &[f64], theta: f64) -> Vec<usize> {
    let max = eta.iter().copied().fold(0.0, f64::max);
    (0..eta.len()).filter(|&k| eta[k] >= theta * max).collect()
}

fn union(mut a: Vec<usize>, b: impl IntoIterator<Item = usize>) -> Vec<usize> {
    a.extend(b);
    a.sort_unstable();
    a.dedup();
    a
}

/// Energy marks plus all active elements with a cylinder edge. Indices refer
/// to positions in `mesh.active()`.
pub fn mark_adhoc1(eta: &[f64], theta: f64, mesh: &Mesh) -> Vec<usize> {
    let touching = mesh.active().iter().enumerate().filter(|(_, &k)| mesh.has_tag(k, EdgeTag::Cylinder)).map(|(i, _)| i);
    union(mark_energy(eta, theta), touching)
}

/// Energy marks plus all active elements with a vertex within `band` of
/// the cylinder surface.
pub fn mark_adhoc2(eta: &[f64], theta: f64, mesh: &Mesh, geom: &BenchGeometry, band: f64) -> Vec<usize> {
    let [cx, cy] = geom.cylinder_center;
    let r = geom.cylinder_radius;
    let near = |k: usize| {
        mesh.elements[k].verts.iter().any(|&v| {
            let x = mesh.vertices[v].x;
            ((x[0] - cx).hypot(x[1] - cy) - r).abs() <= band + 1e-12
        })
    };
    let close = mesh.active().iter().enumerate().filter(|(_, &k)| near(k)).map(|(i, _)| i);
    union(mark_energy(eta, theta), close)
}

/// One solved mesh of the adaptive sequence.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct RefinementRecord {
    pub ref_index: usize,
    pub dof: usize,
    pub elements: usize,
    pub drag_flux: f64,
    pub drag_field: f64,
    pub drag_err: f64,
    pub energy_err: f64,
    pub newton_iters: usize,
    pub quadratic: QuadraticVerdict,
    pub converged: bool,
    pub increments: Vec<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    MaxRefinements,
    DofBudget,
    Diverged,
    SolverFailure(String),
}

/// State handed to the observer after each solved mesh.
pub struct Snapshot<'a> {
    pub mesh: &'a Mesh,
    pub dofs: &'a DofMap,
    pub state: &'a DiscreteState,
    pub kernels: &'a Kernels,
    pub indicators: &'a [f64],
    pub record: &'a RefinementRecord,
}

pub struct AdaptRun {
    pub records: Vec<RefinementRecord>,
    pub stop: StopReason,
    /// last solved mesh with its numbering and state
    pub last: Option<(Mesh, DofMap, DiscreteState)>,
    pub kernels: Kernels,
}

/// Runs the adaptive sequence from `mesh0`, starting from the zero state and
/// warm-starting every refined mesh from the prolonged previous solution.
pub fn adapt_loop(
    cfg: &AdaptConfig,
    params: &ModelParams,
    geom: &BenchGeometry,
    mesh0: Mesh,
    mut observe: impl FnMut(&Snapshot) -> Result<()>,
) -> Result<AdaptRun> {
    cfg.validate()?;
    params.validate()?;
    let kernels = Kernels::new(cfg.orders);
    let bcs = bench_conditions(params, geom);
    let newton = NewtonConfig { penalty: cfg.penalty_t12, ..cfg.newton };
    let mut records = Vec::new();
    let mut last: Option<(Mesh, DofMap, DiscreteState)> = None;
    let mut mesh = mesh0;
    let stop = loop {
        let t0 = Instant::now();
        let dofs = DofMap::new(&mesh, &kernels, &bcs, params)?;
        if !records.is_empty() && dofs.num_dofs() > cfg.dof_budget {
            break StopReason::DofBudget;
        }
        let init = match &last {
            Some((_, _, prev)) => prev.prolongate(&mesh, &dofs),
            None => DiscreteState::zero(&mesh, &dofs),
        };
        let (state, report) = gauss_newton(&mesh, &kernels, params, &dofs, init, &newton)?;
        if let Some((it, msg)) = &report.failure {
            break StopReason::SolverFailure(format!("refinement {}, Newton step {it}: {msg}", records.len()));
        }
        let drag = drag_estimates(&mesh, &kernels, params, &dofs, &state);
        let record = RefinementRecord {
            ref_index: records.len(),
            dof: dofs.num_dofs(),
            elements: mesh.num_active(),
            drag_flux: drag.flux,
            drag_field: drag.field,
            drag_err: drag.error,
            energy_err: report.final_eta(),
            newton_iters: report.iterations(),
            quadratic: report.quadratic(),
            converged: report.converged,
            increments: report.increments(),
            seconds: t0.elapsed().as_secs_f64(),
        };
        observe(&Snapshot { mesh: &mesh, dofs: &dofs, state: &state, kernels: &kernels, indicators: &report.indicators, record: &record })?;
        records.push(record);
        let marked = match cfg.strategy {
            Strategy::Energy => mark_energy(&report.indicators, cfg.theta),
            Strategy::Adhoc1 => mark_adhoc1(&report.indicators, cfg.theta, &mesh),
            Strategy::Adhoc2 => mark_adhoc2(&report.indicators, cfg.theta, &mesh, geom, cfg.cylinder_band),
        };
        let refined = mesh.refine(&marked.iter().map(|&i| mesh.active()[i]).collect::<Vec<_>>());
        last = Some((mesh, dofs, state));
        if report.diverged {
            break StopReason::Diverged;
        }
        if records.len() > cfg.max_refinements {
            break StopReason::MaxRefinements;
        }
        mesh = refined;
    };
    Ok(AdaptRun { records, stop, last, kernels })
}
