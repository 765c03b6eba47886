//! Property suites with pass/fail verdicts, shared by the `check` command
//! and the acceptance tests.

use nalgebra::{DMatrix, DVector};
use rand::{rngs::StdRng, Rng, SeedableRng};

use crate::dpg::{
    assemble, energy_indicators, local_systems, residual_optimality_check, solve_spd, BoundaryConditions, BoundarySpec, DiscreteState,
    DofMap, LocalSystem,
};
use crate::error::Result;
use crate::forms::{dual_norm_split_check, Kernels};
use crate::mesh::{EdgeTag, Mesh};
use crate::mms::{newtonian_polynomial, smooth_stokes, solve_case};
use crate::nonlinear::{quadratic_rate_detector, QuadraticVerdict};
use crate::params::{Model, ModelParams};
use crate::spaces::PolyOrders;

/// Verdict of one suite.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

/// Relative tolerance of the dual-norm, optimality and energy suites.
pub const IDENTITY_TOL: f64 = 1e-10;

/// Dual-norm splitting on `instances` random problems of dimension 2 to 100.
pub fn dual_norm_suite(instances: usize, seed: u64) -> CheckOutcome {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let dim = rng.gen_range(2..=100);
        worst = worst.max(dual_norm_split_check(dim, rng.gen()));
    }
    CheckOutcome::new("dual-norm split", worst <= IDENTITY_TOL, format!("{instances} instances, worst relative gap {worst:.2e}"))
}

/// A linear problem on a mesh with its solver data.
pub struct Fixture {
    pub mesh: Mesh,
    pub kernels: Kernels,
    pub params: ModelParams,
    pub dofs: DofMap,
    pub state: DiscreteState,
}

fn orders() -> PolyOrders {
    PolyOrders::new(2, 2)
}

/// Smooth Stokes flow on a 2x2 mesh of the unit square.
pub fn stokes_fixture() -> Result<Fixture> {
    let case = smooth_stokes(0.59);
    let mesh = Mesh::rect(2, 2, [[0.0, 1.0], [0.0, 1.0]]);
    let kernels = Kernels::new(orders());
    let dofs = DofMap::new(&mesh, &kernels, &case.boundary_conditions(), &case.params)?;
    let state = DiscreteState::zero(&mesh, &dofs);
    Ok(Fixture { mesh, kernels, params: case.params, dofs, state })
}

/// Linearization of a Giesekus flow at a random state on a 2x2 mesh with
/// one refined corner (hanging edges).
pub fn giesekus_fixture(seed: u64) -> Result<Fixture> {
    let coarse = Mesh::rect(2, 2, [[0.0, 1.0], [0.0, 1.0]]);
    let mesh = coarse.refine(&[coarse.active()[0]]);
    nonlinear_fixture(mesh, ModelParams::nondimensional(0.4, 0.5, 0.59, 0.2, Model::Giesekus), seed)
}

/// Linearization of an Oldroyd-B Navier-Stokes flow at a random state on a
/// 3x2 mesh.
pub fn oldroyd_fixture(seed: u64) -> Result<Fixture> {
    let mesh = Mesh::rect(3, 2, [[0.0, 1.5], [0.0, 1.0]]);
    nonlinear_fixture(mesh, ModelParams::nondimensional(0.1, 1.0, 0.59, 0.0, Model::OldroydB), seed)
}

fn nonlinear_fixture(mesh: Mesh, params: ModelParams, seed: u64) -> Result<Fixture> {
    let kernels = Kernels::new(orders());
    let mut bcs = BoundaryConditions::new();
    bcs.set(EdgeTag::Wall, BoundarySpec::zero_trace());
    let dofs = DofMap::new(&mesh, &kernels, &bcs, &params)?;
    let mut state = DiscreteState::zero(&mesh, &dofs);
    let mut rng = StdRng::seed_from_u64(seed);
    for &k in mesh.active() {
        state.fields[k].iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    }
    Ok(Fixture { mesh, kernels, params, dofs, state })
}

impl Fixture {
    pub fn locals(&self) -> Result<Vec<LocalSystem>> {
        local_systems(&self.mesh, &self.kernels, &self.params, &self.dofs, &self.state, None)
    }

    /// Minimizer of the residual functional at the fixture state.
    pub fn solve(&self) -> Result<Vec<f64>> {
        let asm = assemble(&self.mesh, &self.kernels, &self.params, &self.dofs, &self.state, None)?;
        Ok(solve_spd(asm.system)?.0)
    }
}

/// `‖l − B x‖²` in the inverse Gram norm of the whole broken test space,
/// from the unreduced element matrices and one Cholesky factor of the
/// assembled block-diagonal Gram matrix.
pub fn global_residual_sq(dofs: &DofMap, locals: &[LocalSystem], x: &[f64]) -> f64 {
    let n: usize = locals.iter().map(|ls| ls.l.len()).sum();
    let mut gram = DMatrix::zeros(n, n);
    let mut r = DVector::zeros(n);
    let mut off = 0;
    for (ls, map) in locals.iter().zip(dofs.maps()) {
        let nt = ls.l.len();
        let u = map.gather(x);
        for i in 0..nt {
            let bu: f64 = u.iter().enumerate().map(|(j, uj)| ls.b[i + j * nt] * uj).sum();
            r[off + i] = ls.l[i] - bu;
            for j in 0..nt {
                gram[(off + i, off + j)] = ls.g[i + j * nt];
            }
        }
        off += nt;
    }
    let chol = gram.cholesky().expect("test Gram matrix must be SPD");
    r.dot(&chol.solve(&r))
}

/// Random admissible perturbations of the Stokes minimizer never lower the
/// residual functional.
pub fn optimality_suite(trials: usize, seed: u64) -> Result<CheckOutcome> {
    let fx = stokes_fixture()?;
    let x = fx.solve()?;
    let locals = fx.locals()?;
    let worst = residual_optimality_check(&fx.dofs, &locals, &x, trials, seed);
    Ok(CheckOutcome::new(
        "residual optimality",
        worst >= -IDENTITY_TOL,
        format!("{trials} perturbations, smallest relative change {worst:.2e}"),
    ))
}

/// `Σ η_K²` against the globally evaluated residual on three fixtures, at
/// the minimizer and at a random vector.
pub fn energy_identity_suite(seed: u64) -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    let fixtures = [stokes_fixture()?, giesekus_fixture(seed)?, oldroyd_fixture(seed + 1)?];
    let mut rng = StdRng::seed_from_u64(seed);
    for fx in &fixtures {
        let locals = fx.locals()?;
        let minimizer = fx.solve()?;
        let random: Vec<f64> = (0..fx.dofs.num_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for x in [&minimizer, &random] {
            let sum: f64 = energy_indicators(&fx.dofs, &locals, x).iter().map(|e| e * e).sum();
            let global = global_residual_sq(&fx.dofs, &locals, x);
            worst = worst.max((sum - global).abs() / global.max(f64::MIN_POSITIVE));
        }
    }
    Ok(CheckOutcome::new("energy identity", worst <= IDENTITY_TOL, format!("3 fixtures, worst relative gap {worst:.2e}")))
}

/// Newtonian polynomial flow: every field error at most `1e-8` relative to
/// the exact field norm, reached in one Newton iteration.
pub fn newtonian_exactness_suite() -> Result<CheckOutcome> {
    let case = newtonian_polynomial(0.59);
    let mesh = Mesh::rect(2, 2, [[0.0, 1.0], [0.0, 1.0]]);
    let lvl = solve_case(&case, &mesh, orders())?;
    let total = lvl.norms.iter().map(|v| v * v).sum::<f64>().sqrt();
    let worst = lvl.errors.iter().zip(&lvl.norms).map(|(e, n)| e / if *n > 1e-12 * total { *n } else { total }).fold(0.0, f64::max);
    Ok(CheckOutcome::new(
        "newtonian exactness",
        worst <= 1e-8 && lvl.newton_iters == 1,
        format!("worst field error {worst:.2e}, {} Newton iteration(s)", lvl.newton_iters),
    ))
}

/// The rate detector on synthetic increment histories.
pub fn detector_suite() -> CheckOutcome {
    use QuadraticVerdict::*;
    let cases: [(&[f64], QuadraticVerdict); 5] = [
        (&[1e-1, 1e-2, 1e-4, 1e-8], Quadratic),
        (&[1e-1, 5e-2, 2.5e-2, 1.25e-2], NotQuadratic),
        (&[1e-1, 1e-2], Indeterminate),
        (&[1.0, 2.0, 0.5, 1e-1, 1e-2, 1e-4, 1e-8], Quadratic),
        (&[1e-1, 1e-3, 1e-9, 1e-27], Quadratic),
    ];
    let failed: Vec<usize> = cases.iter().enumerate().filter(|(_, (h, v))| quadratic_rate_detector(h) != *v).map(|(i, _)| i).collect();
    CheckOutcome::new(
        "quadratic detector",
        failed.is_empty(),
        if failed.is_empty() { format!("{} synthetic histories", cases.len()) } else { format!("histories {failed:?} misclassified") },
    )
}

/// All suites in a fixed order; errors count as failures.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    let lift = |name: &'static str, r: Result<CheckOutcome>| r.unwrap_or_else(|e| CheckOutcome::new(name, false, e.to_string()));
    vec![
        dual_norm_suite(100, seed),
        lift("residual optimality", optimality_suite(100, seed)),
        lift("energy identity", energy_identity_suite(seed)),
        lift("newtonian exactness", newtonian_exactness_suite()),
        detector_suite(),
    ]
}
