//! Manufactured solutions on the unit square: a polynomial Newtonian flow
//! that lies in the trial space, and a smooth Stokes flow for convergence
//! rates.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::dpg::{BoundaryConditions, BoundarySpec, DiscreteState, DofMap, TraceFn};
use crate::error::Result;
use crate::forms::{fld, ElementGeometry, Kernels, NUM_FIELDS};
use crate::mesh::{EdgeTag, Mesh};
use crate::nonlinear::{gauss_newton, NewtonConfig};
use crate::params::{Model, ModelParams};
use crate::spaces::PolyOrders;

pub type ExactFn = Arc<dyn Fn([f64; 2]) -> [f64; NUM_FIELDS] + Send + Sync>;

/// A manufactured problem: parameters (with body force), exact fields and
/// velocity boundary data on the whole boundary of the unit square.
#[derive(Clone)]
pub struct Manufactured {
    pub name: &'static str,
    pub params: ModelParams,
    pub exact: ExactFn,
}

impl Manufactured {
    pub fn boundary_conditions(&self) -> BoundaryConditions {
        let (e1, e2) = (self.exact.clone(), self.exact.clone());
        let u1: TraceFn = Arc::new(move |x| e1(x)[fld::U1]);
        let u2: TraceFn = Arc::new(move |x| e2(x)[fld::U2]);
        let mut bcs = BoundaryConditions::new();
        bcs.set(EdgeTag::Wall, BoundarySpec { trace: [Some(u1), Some(u2)], flux: Default::default() });
        bcs
    }
}

/// Newtonian fields from velocity, gradient and pressure:
/// `T = η_P (L + Lᵀ)`.
fn newtonian_fields(u: [f64; 2], l: [f64; 4], p: f64, eta_p: f64) -> [f64; NUM_FIELDS] {
    let mut f = [0.0; NUM_FIELDS];
    f[fld::U1] = u[0];
    f[fld::U2] = u[1];
    f[fld::P] = p;
    f[fld::L..fld::L + 4].copy_from_slice(&l);
    f[fld::T11] = 2.0 * eta_p * l[0];
    f[fld::T12] = eta_p * (l[1] + l[2]);
    f[fld::T22] = 2.0 * eta_p * l[3];
    f
}

/// `u = (y², x²)`, `p = x + y − 1`, Newtonian limit, Stokes coupling.
/// Every field is a polynomial of degree at most two.
pub fn newtonian_polynomial(beta: f64) -> Manufactured {
    let base = ModelParams::nondimensional(0.0, 0.0, beta, 0.0, Model::OldroydB);
    let eta = base.eta();
    let eta_p = base.eta_p;
    // g = ∇p − η Δu with Δu = (2, 2)
    let g = 1.0 - 2.0 * eta;
    let params = base.with_force(Arc::new(move |_| [g, g]));
    let exact: ExactFn = Arc::new(move |x: [f64; 2]| {
        newtonian_fields([x[1] * x[1], x[0] * x[0]], [0.0, 2.0 * x[1], 2.0 * x[0], 0.0], x[0] + x[1] - 1.0, eta_p)
    });
    Manufactured { name: "newtonian_polynomial", params, exact }
}

/// Stream function `ψ = sin²(πx) sin²(πy)`, `u = (ψ_y, −ψ_x)`,
/// `p = cos(πx) cos(πy)`, Newtonian limit, Stokes coupling.
pub fn smooth_stokes(beta: f64) -> Manufactured {
    let base = ModelParams::nondimensional(0.0, 0.0, beta, 0.0, Model::OldroydB);
    let eta = base.eta();
    let eta_p = base.eta_p;
    // S(t) = sin²(πt) and its derivatives
    let s = |t: f64| {
        [(PI * t).sin().powi(2), PI * (2.0 * PI * t).sin(), 2.0 * PI * PI * (2.0 * PI * t).cos(), -4.0 * PI.powi(3) * (2.0 * PI * t).sin()]
    };
    let force = move |x: [f64; 2]| {
        let (sx, sy) = (s(x[0]), s(x[1]));
        let lap1 = sx[2] * sy[1] + sx[0] * sy[3];
        let lap2 = -sx[3] * sy[0] - sx[1] * sy[2];
        let gp = [-PI * (PI * x[0]).sin() * (PI * x[1]).cos(), -PI * (PI * x[0]).cos() * (PI * x[1]).sin()];
        [gp[0] - eta * lap1, gp[1] - eta * lap2]
    };
    let params = base.with_force(Arc::new(force));
    let exact: ExactFn = Arc::new(move |x: [f64; 2]| {
        let (sx, sy) = (s(x[0]), s(x[1]));
        let u = [sx[0] * sy[1], -sx[1] * sy[0]];
        let l = [sx[1] * sy[1], sx[0] * sy[2], -sx[2] * sy[0], -sx[1] * sy[1]];
        newtonian_fields(u, l, (PI * x[0]).cos() * (PI * x[1]).cos(), eta_p)
    });
    Manufactured { name: "smooth_stokes", params, exact }
}

/// L² errors of each field component and L² norms of the exact fields.
pub fn field_l2_errors(
    mesh: &Mesh,
    kernels: &Kernels,
    dofs: &DofMap,
    state: &DiscreteState,
    exact: &dyn Fn([f64; 2]) -> [f64; NUM_FIELDS],
) -> ([f64; NUM_FIELDS], [f64; NUM_FIELDS]) {
    let nf = dofs.layout.nf;
    let mut err = [0.0; NUM_FIELDS];
    let mut norm = [0.0; NUM_FIELDS];
    for &k in mesh.active() {
        let geo = ElementGeometry::new(mesh, kernels, k);
        let rt = kernels.rule(geo.curved);
        for (q, &w) in geo.w.iter().enumerate() {
            let phi = &rt.field.values[q * nf..(q + 1) * nf];
            let ex = exact(geo.x[q]);
            for c in 0..NUM_FIELDS {
                let v: f64 = (0..nf).map(|i| state.fields[k][c * nf + i] * phi[i]).sum();
                err[c] += w * (v - ex[c]).powi(2);
                norm[c] += w * ex[c] * ex[c];
            }
        }
    }
    (err.map(f64::sqrt), norm.map(f64::sqrt))
}

/// Result on one mesh of a manufactured-solution study.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct MmsLevel {
    pub elements: usize,
    pub h: f64,
    pub dof: usize,
    pub errors: [f64; NUM_FIELDS],
    /// L² norms of the exact fields
    pub norms: [f64; NUM_FIELDS],
    /// `(Σ_c ‖e_c‖²)^{1/2} / (Σ_c ‖u_c‖²)^{1/2}`
    pub relative: f64,
    pub newton_iters: usize,
    /// total DPG residual of the final state
    pub eta: f64,
    /// second Newton increment (relative), if a second step was taken
    pub second_increment: Option<f64>,
}

/// Solves `case` on `mesh` from the zero state.
pub fn solve_case(case: &Manufactured, mesh: &Mesh, orders: PolyOrders) -> Result<MmsLevel> {
    let kernels = Kernels::new(orders);
    let dofs = DofMap::new(mesh, &kernels, &case.boundary_conditions(), &case.params)?;
    let cfg = NewtonConfig::default();
    let (state, rep) = gauss_newton(mesh, &kernels, &case.params, &dofs, DiscreteState::zero(mesh, &dofs), &cfg)?;
    if let Some((it, msg)) = rep.failure {
        return Err(crate::Error::Config(format!("{} failed at Newton step {it}: {msg}", case.name)));
    }
    let (errors, norms) = field_l2_errors(mesh, &kernels, &dofs, &state, case.exact.as_ref());
    let tot = |a: &[f64; NUM_FIELDS]| a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let h = mesh.active().iter().map(|&k| mesh.element_area(k, 4).sqrt()).fold(0.0, f64::max);
    Ok(MmsLevel {
        elements: mesh.num_active(),
        h,
        dof: dofs.num_dofs(),
        errors,
        norms,
        relative: tot(&errors) / tot(&norms),
        newton_iters: rep.iterations(),
        eta: rep.final_eta(),
        second_increment: rep.steps.get(1).map(|s| s.increment),
    })
}

/// Solves on a `n0 x n0` mesh of the unit square and `levels` uniform
/// refinements of it.
pub fn convergence_study(case: &Manufactured, n0: usize, levels: usize, orders: PolyOrders) -> Result<Vec<MmsLevel>> {
    let mut mesh = Mesh::rect(n0, n0, [[0.0, 1.0], [0.0, 1.0]]);
    let mut out = Vec::with_capacity(levels + 1);
    for l in 0..=levels {
        out.push(solve_case(case, &mesh, orders)?);
        if l < levels {
            let all = mesh.active().to_vec();
            mesh = mesh.refine(&all);
        }
    }
    Ok(out)
}

/// Observed rates `log(e_{i}/e_{i+1}) / log(h_i/h_{i+1})` of the relative
/// total field error.
pub fn observed_rates(levels: &[MmsLevel]) -> Vec<f64> {
    levels.windows(2).map(|w| (w[0].relative / w[1].relative).ln() / (w[0].h / w[1].h).ln()).collect()
}
