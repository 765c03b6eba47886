//! Element-local forms of the linearized ultraweak formulation.
//!
//! Trial fields per element are `u` (2), `p` (1), `L` (4, row-major) and the
//! symmetric `T` (3: `T11, T12, T22`), each expanded in the order-`p` field
//! basis. Every local edge carries the trace `û` (2 components, order
//! `p+1`), the flux `t̂` (2, order `p`) and the stress flux `ĵ` (3, order
//! `p`). Test slots are `v` (2), `q` (1), `M` (4) and the symmetric `S` (3),
//! all in the enriched order `p+dp`.
//!
//! The bilinear form is written as `b(u, v) = Σ_r (u_r, (B* v)_r)` plus
//! interface terms, where each adjoint row `(B* v)_r` at a quadrature point
//! is a combination `a φ + bx ∂xφ + by ∂yφ` of test functions. The same rows
//! build both `B` (paired with trial functions) and the graph-norm Gram
//! matrix (squared and weighted), so the two are consistent by construction.

use blocksparse::dense::{gemm, gemm_raw, Op};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};

use crate::mesh::Mesh;
use crate::params::ModelParams;
use crate::spaces::{edge_basis, field_basis, gauss_rule, test_basis, BasisTable, PolyOrders, TestSlot};

/// Number of scalar trial field components.
pub const NUM_FIELDS: usize = 10;
/// Number of scalar test components.
pub const NUM_TEST: usize = 10;

/// Trial field component indices.
pub mod fld {
    pub const U1: usize = 0;
    pub const U2: usize = 1;
    pub const P: usize = 2;
    /// `L_ij` is at `L + 2 i + j`.
    pub const L: usize = 3;
    pub const T11: usize = 7;
    pub const T12: usize = 8;
    pub const T22: usize = 9;
}

/// Test component indices.
pub mod tst {
    pub const V1: usize = 0;
    pub const V2: usize = 1;
    pub const Q: usize = 2;
    /// `M_ij` is at `M + 2 i + j`.
    pub const M: usize = 3;
    pub const S11: usize = 7;
    pub const S12: usize = 8;
    pub const S22: usize = 9;
}

/// Interface components on one edge: trace `û1, û2`, then fluxes
/// `t̂1, t̂2, ĵ11, ĵ12, ĵ22`.
pub const NUM_FLUX: usize = 5;

/// Index of the symmetric component `(i, j)` in `[11, 12, 22]` order.
#[inline]
pub fn sym_index(i: usize, j: usize) -> usize {
    match (i, j) {
        (0, 0) => 0,
        (1, 1) => 2,
        _ => 1,
    }
}

#[inline]
fn s_slot(i: usize, j: usize) -> usize {
    tst::S11 + sym_index(i, j)
}

#[inline]
fn t_row(i: usize, j: usize) -> usize {
    fld::T11 + sym_index(i, j)
}

/// Sizes and offsets of the local trial and test vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub orders: PolyOrders,
    /// scalar field basis size
    pub nf: usize,
    /// scalar test basis size
    pub nt: usize,
    /// trace basis size per component (`p + 2`)
    pub ntr: usize,
    /// flux basis size per component (`p + 1`)
    pub nfl: usize,
}

impl Layout {
    pub fn new(orders: PolyOrders) -> Self {
        Self { orders, nf: orders.field_dim(), nt: orders.test_dim(), ntr: orders.trace_order() + 1, nfl: orders.flux_order() + 1 }
    }

    pub fn field_offset(&self, comp: usize) -> usize {
        comp * self.nf
    }

    pub fn num_field_dofs(&self) -> usize {
        NUM_FIELDS * self.nf
    }

    /// Interface columns per edge.
    pub fn edge_dim(&self) -> usize {
        2 * self.ntr + NUM_FLUX * self.nfl
    }

    pub fn edge_offset(&self, e: usize) -> usize {
        self.num_field_dofs() + e * self.edge_dim()
    }

    /// First column of trace component `c` on local edge `e`.
    pub fn trace_offset(&self, e: usize, c: usize) -> usize {
        self.edge_offset(e) + c * self.ntr
    }

    /// First column of flux component `c` (`0..5`: `t̂1, t̂2, ĵ11, ĵ12, ĵ22`)
    /// on local edge `e`.
    pub fn flux_offset(&self, e: usize, c: usize) -> usize {
        self.edge_offset(e) + 2 * self.ntr + c * self.nfl
    }

    pub fn trial_dim(&self) -> usize {
        self.num_field_dofs() + 4 * self.edge_dim()
    }

    pub fn test_dim(&self) -> usize {
        NUM_TEST * self.nt
    }

    pub fn test_offset(&self, slot: usize) -> usize {
        slot * self.nt
    }
}

/// Reference-element tables for one quadrature rule.
#[derive(Clone, Debug)]
pub struct RuleTables {
    pub n1d: usize,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub field: BasisTable,
    pub test: BasisTable,
    /// 1D rule used on edges
    pub edge_t: Vec<f64>,
    pub edge_w: Vec<f64>,
    /// test basis values at the edge points of each local edge,
    /// `edge_test[e][k * nt + f]`
    pub edge_test: [Vec<f64>; 4],
    /// field basis values at the edge points of each local edge
    pub edge_field: [Vec<f64>; 4],
}

/// Local edge `e` as a counterclockwise path `t ∈ [-1, 1]` on the reference
/// square, and its reference tangent.
pub fn ref_edge_point(e: usize, t: f64) -> ([f64; 2], [f64; 2]) {
    match e {
        0 => ([t, -1.0], [1.0, 0.0]),
        1 => ([1.0, t], [0.0, 1.0]),
        2 => ([-t, 1.0], [-1.0, 0.0]),
        3 => ([-1.0, -t], [0.0, -1.0]),
        _ => panic!("local edge index out of range"),
    }
}

impl RuleTables {
    fn new(layout: &Layout, n1d: usize) -> Self {
        let q = gauss_rule(n1d);
        let (points, weights) = q.tensor();
        let fb = field_basis(layout.orders.p);
        let tb = test_basis(layout.orders.test_order(), TestSlot::Q);
        let field = fb.tabulate(&points);
        let test = tb.tabulate(&points);
        let mk = |e: usize, b: &crate::spaces::Basis| {
            let pts: Vec<[f64; 2]> = q.points.iter().map(|&t| ref_edge_point(e, t).0).collect();
            b.tabulate(&pts).values
        };
        let edge_test = [0, 1, 2, 3].map(|e| mk(e, &tb));
        let edge_field = [0, 1, 2, 3].map(|e| mk(e, &fb));
        Self { n1d, points, weights, field, test, edge_t: q.points, edge_w: q.weights, edge_test, edge_field }
    }
}

/// Precomputed reference tables for straight and curved elements.
#[derive(Clone, Debug)]
pub struct Kernels {
    pub layout: Layout,
    pub straight: RuleTables,
    pub curved: RuleTables,
}

impl Kernels {
    pub fn new(orders: PolyOrders) -> Self {
        let layout = Layout::new(orders);
        let n = orders.quad_points();
        Self { layout, straight: RuleTables::new(&layout, n), curved: RuleTables::new(&layout, n + 2) }
    }

    pub fn rule(&self, curved: bool) -> &RuleTables {
        if curved {
            &self.curved
        } else {
            &self.straight
        }
    }
}

/// Physical data of one element at the quadrature points of its rule.
#[derive(Clone, Debug)]
pub struct ElementGeometry {
    pub elem: usize,
    pub curved: bool,
    pub x: Vec<[f64; 2]>,
    /// quadrature weight times Jacobian determinant
    pub w: Vec<f64>,
    /// `jinv[q][l][k] = ∂ξ_l / ∂x_k`
    pub jinv: Vec<[[f64; 2]; 2]>,
    pub edge_x: [Vec<[f64; 2]>; 4],
    /// outward unit normals at the edge points
    pub edge_n: [Vec<[f64; 2]>; 4],
    /// edge quadrature weight times arclength element
    pub edge_w: [Vec<f64>; 4],
    /// `+1` when the local edge runs along its global orientation
    pub signs: [f64; 4],
}

impl ElementGeometry {
    pub fn new(mesh: &Mesh, kernels: &Kernels, elem: usize) -> Self {
        let curved = mesh.is_curved(elem);
        let rt = kernels.rule(curved);
        let nq = rt.points.len();
        let mut x = Vec::with_capacity(nq);
        let mut w = Vec::with_capacity(nq);
        let mut jinv = Vec::with_capacity(nq);
        for (p, &wq) in rt.points.iter().zip(&rt.weights) {
            let (xp, j) = mesh.ref_map_eval(elem, *p);
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            assert!(det > 0.0, "element {elem} has a non-positive Jacobian ({det:e})");
            x.push(xp);
            w.push(wq * det);
            jinv.push([[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]]);
        }
        let mut edge_x: [Vec<[f64; 2]>; 4] = Default::default();
        let mut edge_n: [Vec<[f64; 2]>; 4] = Default::default();
        let mut edge_w: [Vec<f64>; 4] = Default::default();
        for e in 0..4 {
            for (&t, &wt) in rt.edge_t.iter().zip(&rt.edge_w) {
                let (r, tan) = ref_edge_point(e, t);
                let (xp, j) = mesh.ref_map_eval(elem, r);
                let tx = j[0][0] * tan[0] + j[0][1] * tan[1];
                let ty = j[1][0] * tan[0] + j[1][1] * tan[1];
                let len = tx.hypot(ty);
                edge_x[e].push(xp);
                edge_n[e].push([ty / len, -tx / len]);
                edge_w[e].push(wt * len);
            }
        }
        let signs = [0, 1, 2, 3].map(|e| mesh.edge_sign(elem, e));
        Self { elem, curved, x, w, jinv, edge_x, edge_n, edge_w, signs }
    }

    pub fn num_points(&self) -> usize {
        self.x.len()
    }

    /// Physical gradient from a reference gradient at point `q`.
    #[inline]
    pub fn grad(&self, q: usize, g: [f64; 2]) -> [f64; 2] {
        let ji = &self.jinv[q];
        [g[0] * ji[0][0] + g[1] * ji[1][0], g[0] * ji[0][1] + g[1] * ji[1][1]]
    }
}

/// Background state `(u0, L0, T0)` at one point. `l[i][j] = L_ij`,
/// `t` is the full symmetric tensor.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PointState {
    pub u: [f64; 2],
    pub l: [[f64; 2]; 2],
    pub t: [[f64; 2]; 2],
}

impl PointState {
    /// Evaluates the background from element field coefficients
    /// (`NUM_FIELDS * nf`, component-major) and field basis values.
    pub fn from_coeffs(coeffs: &[f64], nf: usize, phi: &[f64]) -> Self {
        let val = |c: usize| -> f64 { coeffs[c * nf..(c + 1) * nf].iter().zip(phi).map(|(a, b)| a * b).sum() };
        let t11 = val(fld::T11);
        let t12 = val(fld::T12);
        let t22 = val(fld::T22);
        Self {
            u: [val(fld::U1), val(fld::U2)],
            l: [[val(fld::L), val(fld::L + 1)], [val(fld::L + 2), val(fld::L + 3)]],
            t: [[t11, t12], [t12, t22]],
        }
    }
}

/// Test-function coefficient triple `(a, bx, by)` acting as
/// `a φ + bx ∂xφ + by ∂yφ`.
pub type Coef = [f64; 3];

/// Adjoint rows of the linearized form at one point: `c[r][s]` is the
/// coefficient triple with which test slot `s` enters trial row `r`.
pub fn adjoint_coeffs(params: &ModelParams, bg: &PointState) -> [[Coef; NUM_TEST]; NUM_FIELDS] {
    let mut c = [[[0.0; 3]; NUM_TEST]; NUM_FIELDS];
    let rho = params.rho;
    let lam = params.lambda;
    let ag = params.giesekus_coeff();
    let (u0, l0, t0) = (bg.u, bg.l, bg.t);
    // velocity rows
    for i in 0..2 {
        for j in 0..2 {
            c[i][tst::V1 + j][0] += rho * l0[j][i];
            c[i][tst::M + 2 * i + j][1 + j] += 1.0;
            for k in 0..2 {
                c[i][s_slot(j, k)][1 + i] -= lam * t0[j][k];
            }
        }
        c[i][tst::Q][1 + i] -= 1.0;
    }
    // pressure row
    c[fld::P][tst::V1][1] -= 1.0;
    c[fld::P][tst::V2][2] -= 1.0;
    // velocity-gradient rows
    for i in 0..2 {
        for j in 0..2 {
            let r = fld::L + 2 * i + j;
            c[r][tst::V1 + i][1 + j] += params.eta_s;
            c[r][tst::V1 + i][0] += rho * u0[j];
            c[r][tst::M + 2 * i + j][0] += 1.0;
            c[r][s_slot(i, j)][0] -= 2.0 * params.eta_p;
            for k in 0..2 {
                c[r][s_slot(i, k)][0] -= 2.0 * lam * t0[j][k];
            }
        }
    }
    // stress rows, accumulated over the full tensor index
    for i in 0..2 {
        for j in 0..2 {
            let r = t_row(i, j);
            c[r][tst::V1 + i][1 + j] += 1.0;
            let s = s_slot(i, j);
            c[r][s][0] += 1.0;
            c[r][s][1] -= lam * u0[0];
            c[r][s][2] -= lam * u0[1];
            for k in 0..2 {
                c[r][s_slot(k, j)][0] += -2.0 * lam * l0[k][i] + ag * t0[k][i];
                c[r][s_slot(i, k)][0] += ag * t0[j][k];
            }
        }
    }
    c
}

/// Coefficients of the nonlinear field form `b_nl((u0, 0, L0, T0), ·)` at
/// one point, per test slot.
pub fn nonlinear_coeffs(params: &ModelParams, bg: &PointState) -> [Coef; NUM_TEST] {
    let mut c = [[0.0; 3]; NUM_TEST];
    let (u0, l0, t0) = (bg.u, bg.l, bg.t);
    let lam = params.lambda;
    let ag = params.giesekus_coeff();
    for i in 0..2 {
        for j in 0..2 {
            c[tst::V1 + i][0] += params.rho * l0[i][j] * u0[j];
            c[tst::V1 + i][1 + j] += params.eta_s * l0[i][j] + t0[i][j];
            let m = tst::M + 2 * i + j;
            c[m][0] += l0[i][j];
            c[m][1 + j] += u0[i];
            let s = s_slot(i, j);
            let mut lt = 0.0;
            let mut tt = 0.0;
            for k in 0..2 {
                lt += l0[i][k] * t0[k][j];
                tt += t0[i][k] * t0[k][j];
                c[s][1 + k] -= lam * t0[i][j] * u0[k];
            }
            c[s][0] += t0[i][j] - 2.0 * lam * lt - 2.0 * params.eta_p * l0[i][j] + ag * tt;
        }
        c[tst::Q][1 + i] -= u0[i];
    }
    c
}

/// Graph-norm weights of the trial rows.
pub fn row_weights(params: &ModelParams) -> [f64; NUM_FIELDS] {
    let eta = params.eta();
    let wu = params.l0 * params.l0 / (eta * eta);
    let wl = 1.0 / (params.eta_s * params.eta_s);
    [wu, wu, 1.0, wl, wl, wl, wl, 1.0, 0.5, 1.0]
}

/// L² weights of the test components (the off-diagonal of `S` counts twice).
pub const TEST_MASS_WEIGHTS: [f64; NUM_TEST] = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 1.0];

/// Stress-flux pairing weights `ĵ : S`.
pub const SYM_PAIR_WEIGHTS: [f64; 3] = [1.0, 2.0, 1.0];

/// Dense element matrices, column-major.
#[derive(Clone, Debug)]
pub struct LocalMatrices {
    /// `test_dim x trial_dim`
    pub b: Vec<f64>,
    /// `test_dim x test_dim`
    pub g: Vec<f64>,
    /// `test_dim`
    pub l: Vec<f64>,
    /// Penalty rows `npen x trial_dim` with their targets, paired with an
    /// identity Gram; empty when no penalty applies.
    pub pen_rows: Vec<f64>,
    pub pen_rhs: Vec<f64>,
}

impl LocalMatrices {
    pub fn num_penalty_rows(&self) -> usize {
        self.pen_rhs.len()
    }
}

/// Optional penalty on `T12` along the listed local edges.
#[derive(Clone, Copy, Debug, Default)]
pub struct PenaltySpec {
    pub weight: f64,
    pub edges: [bool; 4],
}

/// Builds `B`, `G`, the load and the optional penalty rows of one element.
pub fn local_matrices(
    kernels: &Kernels,
    geo: &ElementGeometry,
    params: &ModelParams,
    bg_coeffs: &[f64],
    penalty: Option<&PenaltySpec>,
) -> LocalMatrices {
    let lay = &kernels.layout;
    let rt = kernels.rule(geo.curved);
    let nq = geo.num_points();
    let (nf, nt) = (lay.nf, lay.nt);
    let ntest = lay.test_dim();
    let ntrial = lay.trial_dim();
    assert_eq!(bg_coeffs.len(), lay.num_field_dofs(), "background coefficient length");
    let weights = row_weights(params);

    // physical test gradients at the points
    let mut tgrad = vec![[0.0; 2]; nq * nt];
    for q in 0..nq {
        for f in 0..nt {
            tgrad[q * nt + f] = geo.grad(q, rt.test.grads[q * nt + f]);
        }
    }
    let tval = &rt.test.values;

    let ld = NUM_FIELDS * nq;
    let mut r = vec![0.0; ld * ntest];
    let mut load = vec![0.0; ntest];
    for q in 0..nq {
        let bg = PointState::from_coeffs(bg_coeffs, nf, &rt.field.values[q * nf..(q + 1) * nf]);
        let c = adjoint_coeffs(params, &bg);
        for (row, crow) in c.iter().enumerate() {
            for (s, cs) in crow.iter().enumerate() {
                if cs[0] == 0.0 && cs[1] == 0.0 && cs[2] == 0.0 {
                    continue;
                }
                let base = row * nq + q;
                for f in 0..nt {
                    let g = tgrad[q * nt + f];
                    r[base + (s * nt + f) * ld] += cs[0] * tval[q * nt + f] + cs[1] * g[0] + cs[2] * g[1];
                }
            }
        }
        let mut lc = nonlinear_coeffs(params, &bg);
        for s in lc.iter_mut() {
            for v in s.iter_mut() {
                *v = -*v;
            }
        }
        if let Some(force) = &params.force {
            let g = force(geo.x[q]);
            lc[tst::V1][0] += g[0];
            lc[tst::V2][0] += g[1];
        }
        let w = geo.w[q];
        for (s, cs) in lc.iter().enumerate() {
            if cs[0] == 0.0 && cs[1] == 0.0 && cs[2] == 0.0 {
                continue;
            }
            for f in 0..nt {
                let g = tgrad[q * nt + f];
                load[s * nt + f] += w * (cs[0] * tval[q * nt + f] + cs[1] * g[0] + cs[2] * g[1]);
            }
        }
    }

    // Gram: weighted squares of the adjoint rows plus the L² term
    let mut rw = r.clone();
    for col in 0..ntest {
        for row in 0..NUM_FIELDS {
            for q in 0..nq {
                rw[row * nq + q + col * ld] *= (weights[row] * geo.w[q]).sqrt();
            }
        }
    }
    let mut g = vec![0.0; ntest * ntest];
    gemm(Op::T, Op::N, ntest, ntest, ld, 1.0, &rw, ld, &rw, ld, 0.0, &mut g, ntest);
    let mut phiw = vec![0.0; nq * nt];
    for q in 0..nq {
        let sw = geo.w[q].sqrt();
        for f in 0..nt {
            phiw[q + f * nq] = sw * tval[q * nt + f];
        }
    }
    let mut mass = vec![0.0; nt * nt];
    gemm(Op::T, Op::N, nt, nt, nq, 1.0, &phiw, nq, &phiw, nq, 0.0, &mut mass, nt);
    for (s, &ms) in TEST_MASS_WEIGHTS.iter().enumerate() {
        let off = s * nt;
        for j in 0..nt {
            for i in 0..nt {
                g[(off + i) + (off + j) * ntest] += ms * mass[i + j * nt];
            }
        }
    }

    // B, field columns: B_r = R_r^T (W Ψ)
    let mut b = vec![0.0; ntest * ntrial];
    let mut wpsi = vec![0.0; nq * nf];
    for q in 0..nq {
        for j in 0..nf {
            wpsi[q + j * nq] = geo.w[q] * rt.field.values[q * nf + j];
        }
    }
    for row in 0..NUM_FIELDS {
        // SAFETY: all offsets stay inside `r`, `wpsi` and `b`; `b` is distinct.
        unsafe {
            gemm_raw(
                ntest,
                nq,
                nf,
                1.0,
                r.as_ptr().add(row * nq),
                (ld as isize, 1),
                wpsi.as_ptr(),
                (1, nq as isize),
                0.0,
                b.as_mut_ptr().add(lay.field_offset(row) * ntest),
                (1, ntest as isize),
            );
        }
    }

    // interface columns
    let trace_b = edge_basis(lay.orders.trace_order(), false);
    let flux_b = edge_basis(lay.orders.flux_order(), true);
    let lam = params.lambda;
    for e in 0..4 {
        let sg = geo.signs[e];
        let et = &rt.edge_test[e];
        for (k, &t) in rt.edge_t.iter().enumerate() {
            let te = sg * t;
            let (th, _) = trace_b.eval_1d(te);
            let (ch, _) = flux_b.eval_1d(te);
            let w = geo.edge_w[e][k];
            let n = geo.edge_n[e][k];
            let phi = &et[k * nt..(k + 1) * nt];
            // trace: -<û, M n> + <û·n, q>
            for i in 0..2 {
                let c0 = lay.trace_offset(e, i);
                for (m, &thm) in th.iter().enumerate() {
                    let col = &mut b[(c0 + m) * ntest..(c0 + m + 1) * ntest];
                    let wm = w * thm;
                    for f in 0..nt {
                        let pf = wm * phi[f];
                        col[tst::M * nt + (2 * i) * nt + f] -= pf * n[0];
                        col[tst::M * nt + (2 * i + 1) * nt + f] -= pf * n[1];
                        col[tst::Q * nt + f] += pf * n[i];
                    }
                }
            }
            // traction flux: -<t̂, v>
            for i in 0..2 {
                let c0 = lay.flux_offset(e, i);
                for (m, &chm) in ch.iter().enumerate() {
                    let col = &mut b[(c0 + m) * ntest..(c0 + m + 1) * ntest];
                    let wm = -sg * w * chm;
                    for f in 0..nt {
                        col[(tst::V1 + i) * nt + f] += wm * phi[f];
                    }
                }
            }
            // stress flux: λ <ĵ, S>
            if lam != 0.0 {
                for c in 0..3 {
                    let c0 = lay.flux_offset(e, 2 + c);
                    for (m, &chm) in ch.iter().enumerate() {
                        let col = &mut b[(c0 + m) * ntest..(c0 + m + 1) * ntest];
                        let wm = lam * sg * w * chm * SYM_PAIR_WEIGHTS[c];
                        for f in 0..nt {
                            col[(tst::S11 + c) * nt + f] += wm * phi[f];
                        }
                    }
                }
            }
        }
    }

    let (pen_rows, pen_rhs) = match penalty {
        Some(spec) if spec.weight > 0.0 && spec.edges.iter().any(|&x| x) => penalty_rows(lay, rt, geo, bg_coeffs, spec),
        _ => (Vec::new(), Vec::new()),
    };
    LocalMatrices { b, g, l: load, pen_rows, pen_rhs }
}

fn penalty_rows(lay: &Layout, rt: &RuleTables, geo: &ElementGeometry, bg: &[f64], spec: &PenaltySpec) -> (Vec<f64>, Vec<f64>) {
    let nf = lay.nf;
    let ne = rt.edge_t.len();
    let edges: Vec<usize> = (0..4).filter(|&e| spec.edges[e]).collect();
    let npen = edges.len() * ne;
    let ntrial = lay.trial_dim();
    let mut rows = vec![0.0; npen * ntrial];
    let mut rhs = vec![0.0; npen];
    let t12 = &bg[lay.field_offset(fld::T12)..lay.field_offset(fld::T12) + nf];
    for (ie, &e) in edges.iter().enumerate() {
        for k in 0..ne {
            let row = ie * ne + k;
            let sw = (spec.weight * geo.edge_w[e][k]).sqrt();
            let psi = &rt.edge_field[e][k * nf..(k + 1) * nf];
            let mut cur = 0.0;
            for j in 0..nf {
                rows[row + (lay.field_offset(fld::T12) + j) * npen] = sw * psi[j];
                cur += t12[j] * psi[j];
            }
            rhs[row] = -sw * cur;
        }
    }
    (rows, rhs)
}

/// Maximum deviation, over 20 random symmetric `S`, between the implemented
/// Giesekus derivative `a (T0 ΔT + ΔT T0) : S` (read from the adjoint table)
/// and a central difference of `a T² : S`.
pub fn giesekus_linearization_check(params: &ModelParams, t0: [[f64; 2]; 2], dt: [[f64; 2]; 2], seed: u64) -> f64 {
    let a = params.giesekus_coeff();
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let square = |t: [[f64; 2]; 2]| {
        let mut o = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                o[i][j] = a * (t[i][0] * t[0][j] + t[i][1] * t[1][j]);
            }
        }
        o
    };
    let shifted = |eps: f64| {
        let mut t = t0;
        for i in 0..2 {
            for j in 0..2 {
                t[i][j] += eps * dt[i][j];
            }
        }
        t
    };
    let bg = PointState { t: t0, ..Default::default() };
    let with = adjoint_coeffs(params, &bg);
    let mut plain = params.clone();
    plain.alpha = 0.0;
    let without = adjoint_coeffs(&plain, &bg);
    let dts = [dt[0][0], dt[0][1], dt[1][1]];
    let eps = 1e-5;
    let (fp, fm) = (square(shifted(eps)), square(shifted(-eps)));
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let s12 = rng.gen_range(-1.0..1.0);
        let s = [[rng.gen_range(-1.0..1.0), s12], [s12, rng.gen_range(-1.0..1.0)]];
        let ss = [s[0][0], s[0][1], s[1][1]];
        let mut implemented = 0.0;
        for (ri, &d) in dts.iter().enumerate() {
            for (si, &sv) in ss.iter().enumerate() {
                let (r, sl) = (fld::T11 + ri, tst::S11 + si);
                implemented += d * (with[r][sl][0] - without[r][sl][0]) * sv;
            }
        }
        let mut fd = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                fd += (fp[i][j] - fm[i][j]) / (2.0 * eps) * s[i][j];
            }
        }
        worst = worst.max((implemented - fd).abs());
    }
    worst
}

/// Checks the dual-norm splitting identity on a random instance: for a
/// random SPD inner product on `R^dim`, a random split into a subspace and
/// its orthogonal complement, and a random functional `l`, returns the
/// relative difference between the squared dual norm of `l` and the sum of
/// the squared dual norms of its two restrictions.
pub fn dual_norm_split_check(dim: usize, seed: u64) -> f64 {
    assert!(dim >= 2, "dimension must be at least 2");
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
    let gram = &a * a.transpose() + DMatrix::identity(dim, dim) * (dim as f64) * 0.1;
    let m = rng.gen_range(1..dim);
    let l = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
    let basis = DMatrix::from_fn(dim, m, |_, _| rng.gen_range(-1.0..1.0));
    dual_norm_split(&gram, &basis, &l)
}

/// The splitting identity for an inner product `gram`, a subspace given by
/// the columns of `basis`, and a functional `l`. The second subspace is the
/// `gram`-orthogonal complement, computed as the null space of
/// `basisᵀ gram`. Every dual norm is evaluated by an explicit Riesz solve
/// in its own subspace.
pub fn dual_norm_split(gram: &DMatrix<f64>, basis: &DMatrix<f64>, l: &DVector<f64>) -> f64 {
    let dim = gram.nrows();
    let m = basis.ncols();
    let dual_sq = |b: &DMatrix<f64>| -> f64 {
        let gb = b.transpose() * gram * b;
        let lb = b.transpose() * l;
        let ch = gb.cholesky().expect("restricted inner product must be SPD");
        lb.dot(&ch.solve(&lb))
    };
    let whole = dual_sq(&DMatrix::identity(dim, dim));
    let c = basis.transpose() * gram;
    let eig = (c.transpose() * &c).symmetric_eigen();
    let mut idx: Vec<usize> = (0..dim).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let comp = DMatrix::from_fn(dim, dim - m, |i, j| eig.eigenvectors[(i, idx[j])]);
    let split = dual_sq(basis) + if dim > m { dual_sq(&comp) } else { 0.0 };
    (whole - split).abs() / whole.abs().max(f64::MIN_POSITIVE)
}
