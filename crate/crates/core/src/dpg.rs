//! Element condensation, global assembly and the bordered SPD solve.
//!
//! Each element contributes `A_K = Bᵀ G⁻¹ B` and `f_K = Bᵀ G⁻¹ l`, computed
//! from the Cholesky factor `G = L Lᵀ` as `W = L⁻¹ B`, `y = L⁻¹ l`,
//! `A_K = Wᵀ W`, `f_K = Wᵀ y`. The same factor gives the energy indicator
//! `η_K = ‖y − W u_K‖`.
//!
//! Global unknowns are grouped into nodes: one per active element (its field
//! coefficients), one per edge carrying interface unknowns (trace bubbles and
//! flux coefficients) and one per non-hanging vertex (the two trace vertex
//! values). Prescribed values are removed from the unknowns, and the
//! interface coefficients of a hanging edge are expressed through those of
//! its parent edge.

use std::collections::{BTreeMap, HashMap};
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use blocksparse::dense::{gemm, Op};
use blocksparse::{BlockGraph, BlockMatrix, DenseCholesky, FactorError, OrderingSpec, Symbolic};
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::forms::{fld, local_matrices, ref_edge_point, ElementGeometry, Kernels, Layout, PenaltySpec, NUM_FIELDS};
use crate::mesh::{EdgeTag, Mesh};
use crate::params::ModelParams;
use crate::spaces::{edge_basis, gauss_rule, restriction_matrix, Basis};

/// Condensed element matrices.
#[derive(Clone, Debug)]
pub struct Condensed {
    pub n_test: usize,
    pub n_trial: usize,
    /// `A_K`, `n_trial x n_trial`
    pub a: Vec<f64>,
    /// `f_K`
    pub f: Vec<f64>,
    /// `W = L⁻¹ B`, `n_test x n_trial`
    pub w: Vec<f64>,
    /// `y = L⁻¹ l`
    pub y: Vec<f64>,
}

impl Condensed {
    /// `‖y − W u‖`, the dual norm of the element residual `l − B u`.
    pub fn residual_norm(&self, u: &[f64]) -> f64 {
        let mut r = self.y.clone();
        gemm(Op::N, Op::N, self.n_test, 1, self.n_trial, -1.0, &self.w, self.n_test, u, self.n_trial, 1.0, &mut r, self.n_test);
        r.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Computes `A_K = Bᵀ G⁻¹ B` and `f_K = Bᵀ G⁻¹ l` through a Cholesky factor
/// of `G`. `b` is `n_test x n_trial` column-major.
pub fn condense_local(elem: usize, b: &[f64], g: &[f64], l: &[f64], n_test: usize, n_trial: usize) -> Result<Condensed> {
    if b.len() != n_test * n_trial || g.len() != n_test * n_test || l.len() != n_test {
        return Err(Error::Layout(format!(
            "element {elem}: B is {} (expected {}), G is {} (expected {}), l is {} (expected {n_test})",
            b.len(),
            n_test * n_trial,
            g.len(),
            n_test * n_test,
            l.len()
        )));
    }
    let chol = DenseCholesky::factor(n_test, g.to_vec()).map_err(|e| match e {
        FactorError::NotPositiveDefinite { index, value, .. } => Error::GramDegenerate { elem, pivot: index, value },
        other => Error::Factorization(other),
    })?;
    let mut w = b.to_vec();
    chol.solve_lower(&mut w, n_trial);
    let mut y = l.to_vec();
    chol.solve_lower(&mut y, 1);
    let mut a = vec![0.0; n_trial * n_trial];
    gemm(Op::T, Op::N, n_trial, n_trial, n_test, 1.0, &w, n_test, &w, n_test, 0.0, &mut a, n_trial);
    let mut f = vec![0.0; n_trial];
    gemm(Op::T, Op::N, n_trial, 1, n_test, 1.0, &w, n_test, &y, n_test, 0.0, &mut f, n_trial);
    Ok(Condensed { n_test, n_trial, a, f, w, y })
}

/// Prescribed trace value as a function of position.
pub type TraceFn = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;
/// Prescribed flux value as a function of position and the outward unit
/// normal of the adjacent element.
pub type FluxFn = Arc<dyn Fn([f64; 2], [f64; 2]) -> f64 + Send + Sync>;

/// Prescriptions on one boundary part: trace components `û1, û2` and flux
/// components `t̂1, t̂2, ĵ11, ĵ12, ĵ22`. `None` leaves the unknown free.
#[derive(Clone, Default)]
pub struct BoundarySpec {
    pub trace: [Option<TraceFn>; 2],
    pub flux: [Option<FluxFn>; 5],
}

impl BoundarySpec {
    pub fn zero_trace() -> Self {
        let z: TraceFn = Arc::new(|_| 0.0);
        Self { trace: [Some(z.clone()), Some(z)], flux: Default::default() }
    }
}

/// Boundary prescriptions per edge tag.
#[derive(Clone, Default)]
pub struct BoundaryConditions {
    specs: HashMap<EdgeTag, BoundarySpec>,
}

impl BoundaryConditions {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, tag: EdgeTag, spec: BoundarySpec) -> &mut Self {
        self.specs.insert(tag, spec);
        self
    }

    pub fn get(&self, tag: EdgeTag) -> Option<&BoundarySpec> {
        self.specs.get(&tag)
    }
}

/// An interface unknown that is either solved for (global index) or fixed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EntityDof {
    Free(usize),
    Fixed(f64),
}

/// A local coefficient expressed through global unknowns plus a constant.
#[derive(Clone, Debug, Default, PartialEq)]
struct LinComb {
    terms: Vec<(usize, f64)>,
    constant: f64,
}

impl LinComb {
    fn of(d: EntityDof) -> Self {
        match d {
            EntityDof::Free(i) => Self { terms: vec![(i, 1.0)], constant: 0.0 },
            EntityDof::Fixed(v) => Self { terms: Vec::new(), constant: v },
        }
    }

    fn axpy(&mut self, a: f64, other: &LinComb) {
        if a == 0.0 {
            return;
        }
        for &(i, c) in &other.terms {
            match self.terms.iter_mut().find(|(j, _)| *j == i) {
                Some(t) => t.1 += a * c,
                None => self.terms.push((i, a * c)),
            }
        }
        self.constant += a * other.constant;
    }

    fn cleaned(mut self) -> Self {
        self.terms.retain(|&(_, c)| c.abs() > 1e-14);
        self.terms.sort_by_key(|t| t.0);
        self
    }
}

fn mat_apply(m: &DMatrix<f64>, v: &[LinComb]) -> Vec<LinComb> {
    (0..m.nrows())
        .map(|i| {
            let mut acc = LinComb::default();
            for (j, vj) in v.iter().enumerate() {
                acc.axpy(m[(i, j)], vj);
            }
            acc
        })
        .collect()
}

/// How one element's local trial vector is built from the global vector:
/// `u_K = P x + fixed`.
#[derive(Clone, Debug)]
pub struct ElemMap {
    pub elem: usize,
    /// distinct global unknowns touched, sorted
    pub glob: Vec<usize>,
    /// for each local column: `(position in glob, coefficient)`
    pub cols: Vec<Vec<(usize, f64)>>,
    pub fixed: Vec<f64>,
}

impl ElemMap {
    /// Local vector `P x + fixed`.
    pub fn gather(&self, x: &[f64]) -> Vec<f64> {
        self.cols.iter().zip(&self.fixed).map(|(c, &g)| g + c.iter().map(|&(k, a)| a * x[self.glob[k]]).sum::<f64>()).collect()
    }

    /// Dense `P`, `n_local x glob.len()` column-major.
    pub fn dense_p(&self) -> Vec<f64> {
        let n = self.cols.len();
        let mut p = vec![0.0; n * self.glob.len()];
        for (r, c) in self.cols.iter().enumerate() {
            for &(k, a) in c {
                p[r + k * n] += a;
            }
        }
        p
    }
}

/// Global numbering of unknowns for a mesh, boundary conditions and
/// polynomial orders.
#[derive(Clone)]
pub struct DofMap {
    pub layout: Layout,
    ndof: usize,
    node_offsets: Vec<usize>,
    node_sizes: Vec<usize>,
    sym: Arc<Symbolic>,
    /// element id → field node (usize::MAX when inactive)
    field_node: Vec<usize>,
    /// owning edge → interface unknowns (bubbles of both trace components,
    /// then the five flux components)
    edge_dofs: BTreeMap<usize, Vec<EntityDof>>,
    vertex_dofs: BTreeMap<usize, [EntityDof; 2]>,
    maps: Vec<ElemMap>,
    /// position of an element id in `mesh.active()`
    active_pos: Vec<usize>,
    /// integrals of the pressure basis, as a global vector
    border: Vec<f64>,
    /// regularization pin (a pressure coefficient of the first element)
    pin: usize,
    /// element field mass matrices (scalar basis), per active position
    mass: Vec<Vec<f64>>,
    /// reflective local edges per active position
    reflective: Vec<[bool; 4]>,
}

impl std::fmt::Debug for DofMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DofMap")
            .field("ndof", &self.ndof)
            .field("nodes", &self.node_sizes.len())
            .field("elements", &self.maps.len())
            .finish()
    }
}

struct EdgeParam {
    elem: usize,
    local: usize,
    sign: f64,
}

fn edge_param(mesh: &Mesh, edge: usize) -> EdgeParam {
    let elem = *mesh.edges[edge].elements.iter().find(|&&k| mesh.is_leaf(k)).expect("active edge has an active element");
    let local = mesh.elements[elem].edges.iter().position(|&e| e == edge).unwrap();
    EdgeParam { elem, local, sign: mesh.edge_sign(elem, local) }
}

/// Point and outward normal of `edge` at its own parameter `t`.
fn edge_point(mesh: &Mesh, ep: &EdgeParam, t: f64) -> ([f64; 2], [f64; 2]) {
    let (r, tan) = ref_edge_point(ep.local, ep.sign * t);
    let (x, j) = mesh.ref_map_eval(ep.elem, r);
    let tx = j[0][0] * tan[0] + j[0][1] * tan[1];
    let ty = j[1][0] * tan[0] + j[1][1] * tan[1];
    let len = tx.hypot(ty);
    (x, [ty / len, -tx / len])
}

/// L² projection of `f` onto the columns `cols` of a 1D basis on `[-1, 1]`.
fn project_1d(basis: &Basis, cols: std::ops::Range<usize>, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let quad = gauss_rule(basis.order + 6);
    let n = cols.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut r = nalgebra::DVector::<f64>::zeros(n);
    for (&t, &w) in quad.points.iter().zip(&quad.weights) {
        let (v, _) = basis.eval_1d(t);
        let ft = f(t);
        for (a, ia) in cols.clone().enumerate() {
            r[a] += w * v[ia] * ft;
            for (b, ib) in cols.clone().enumerate() {
                m[(a, b)] += w * v[ia] * v[ib];
            }
        }
    }
    m.cholesky().expect("1D mass matrix is SPD").solve(&r).iter().copied().collect()
}

impl DofMap {
    pub fn new(mesh: &Mesh, kernels: &Kernels, bcs: &BoundaryConditions, params: &ModelParams) -> Result<Self> {
        let layout = kernels.layout;
        let (ntr, nfl) = (layout.ntr, layout.nfl);
        let nb = ntr - 2;
        let trace_b = edge_basis(layout.orders.trace_order(), false);
        let flux_b = edge_basis(layout.orders.flux_order(), true);
        let active: Vec<usize> = mesh.active().to_vec();

        // fixed values of vertex components and edge unknowns
        let mut vfix: BTreeMap<usize, [Option<f64>; 2]> = BTreeMap::new();
        let mut efix: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
        let owning: Vec<usize> = mesh.active_edges().into_iter().filter(|&e| mesh.edge_owns_dofs(e)).collect();
        for &e in &owning {
            efix.insert(e, vec![None; 2 * nb + 5 * nfl]);
        }
        let no_stress_flux = params.lambda == 0.0;
        for &e in &owning {
            let tag = mesh.edges[e].tag;
            if tag == EdgeTag::Interior {
                continue;
            }
            let Some(spec) = bcs.get(tag) else { continue };
            for c in 0..2 {
                if let Some(g) = &spec.trace[c] {
                    for v in mesh.edges[e].v {
                        let slot = vfix.entry(v).or_insert([None, None]);
                        if slot[c].is_none() {
                            slot[c] = Some(g(mesh.vertices[v].x));
                        }
                    }
                }
            }
        }
        for &e in &owning {
            let tag = mesh.edges[e].tag;
            let fixes = efix.get_mut(&e).unwrap();
            if no_stress_flux {
                for c in 2..5 {
                    for m in 0..nfl {
                        fixes[2 * nb + c * nfl + m] = Some(0.0);
                    }
                }
            }
            if tag == EdgeTag::Interior {
                continue;
            }
            let Some(spec) = bcs.get(tag) else { continue };
            let ep = edge_param(mesh, e);
            let [va, vb] = mesh.edges[e].v;
            for c in 0..2 {
                if let Some(g) = &spec.trace[c] {
                    let (g0, g1) = (vfix[&va][c].unwrap(), vfix[&vb][c].unwrap());
                    let coeffs = project_1d(&trace_b, 2..ntr, |t| {
                        let (x, _) = edge_point(mesh, &ep, t);
                        g(x) - g0 * 0.5 * (1.0 - t) - g1 * 0.5 * (1.0 + t)
                    });
                    for (m, v) in coeffs.into_iter().enumerate() {
                        fixes[c * nb + m] = Some(v);
                    }
                }
            }
            for c in 0..5 {
                if let Some(f) = &spec.flux[c] {
                    let coeffs = project_1d(&flux_b, 0..nfl, |t| {
                        let (x, n) = edge_point(mesh, &ep, t);
                        ep.sign * f(x, n)
                    });
                    for (m, v) in coeffs.into_iter().enumerate() {
                        fixes[2 * nb + c * nfl + m] = Some(v);
                    }
                }
            }
        }

        // nodes: fields, then edges, then vertices
        let mut node_sizes = Vec::new();
        let mut node_coords = Vec::new();
        let mut first = Vec::new();
        let mut field_node = vec![usize::MAX; mesh.elements.len()];
        let mut next = 0usize;
        let nfield = layout.num_field_dofs();
        for &k in &active {
            field_node[k] = node_sizes.len();
            node_sizes.push(nfield);
            node_coords.push(mesh.centroid(k));
            first.push(true);
        }
        let mut node_offsets: Vec<usize> = Vec::new();
        let mut acc = 0;
        for &s in &node_sizes {
            node_offsets.push(acc);
            acc += s;
        }
        next += acc;
        let mut edge_dofs = BTreeMap::new();
        let mut edge_node: BTreeMap<usize, usize> = BTreeMap::new();
        for (&e, fixes) in &efix {
            let start = next;
            let dofs: Vec<EntityDof> = fixes
                .iter()
                .map(|f| match f {
                    Some(v) => EntityDof::Fixed(*v),
                    None => {
                        next += 1;
                        EntityDof::Free(next - 1)
                    }
                })
                .collect();
            if next > start {
                edge_node.insert(e, node_sizes.len());
                node_offsets.push(start);
                node_sizes.push(next - start);
                let [a, b] = mesh.edges[e].v;
                let (xa, xb) = (mesh.vertices[a].x, mesh.vertices[b].x);
                node_coords.push([0.5 * (xa[0] + xb[0]), 0.5 * (xa[1] + xb[1])]);
                first.push(false);
            }
            edge_dofs.insert(e, dofs);
        }
        let mut vertex_dofs = BTreeMap::new();
        for v in mesh.active_vertices() {
            if mesh.vertex_is_hanging(v) {
                continue;
            }
            let start = next;
            let fx = vfix.get(&v).copied().unwrap_or([None, None]);
            let dofs = fx.map(|f| match f {
                Some(val) => EntityDof::Fixed(val),
                None => {
                    next += 1;
                    EntityDof::Free(next - 1)
                }
            });
            if next > start {
                node_offsets.push(start);
                node_sizes.push(next - start);
                node_coords.push(mesh.vertices[v].x);
                first.push(false);
            }
            vertex_dofs.insert(v, dofs);
        }
        let ndof = next;

        // local-to-global maps
        let restr = Restrictions::new(&trace_b, &flux_b);
        let resolver = Resolver { mesh, edge_dofs: &edge_dofs, vertex_dofs: &vertex_dofs, restr: &restr, layout };
        let mut maps = Vec::with_capacity(active.len());
        let mut active_pos = vec![usize::MAX; mesh.elements.len()];
        for (pos, &k) in active.iter().enumerate() {
            active_pos[k] = pos;
            let mut lc: Vec<LinComb> = Vec::with_capacity(layout.trial_dim());
            let off = node_offsets[field_node[k]];
            for i in 0..nfield {
                lc.push(LinComb::of(EntityDof::Free(off + i)));
            }
            for e in 0..4 {
                let edge = mesh.elements[k].edges[e];
                for c in 0..2 {
                    lc.extend(resolver.trace(edge, c)?);
                }
                for c in 0..5 {
                    lc.extend(resolver.flux(edge, c)?);
                }
            }
            let lc: Vec<LinComb> = lc.into_iter().map(LinComb::cleaned).collect();
            let mut glob: Vec<usize> = lc.iter().flat_map(|c| c.terms.iter().map(|t| t.0)).collect();
            glob.sort_unstable();
            glob.dedup();
            let cols = lc.iter().map(|c| c.terms.iter().map(|&(g, a)| (glob.binary_search(&g).unwrap(), a)).collect()).collect();
            let fixed = lc.iter().map(|c| c.constant).collect();
            maps.push(ElemMap { elem: k, glob, cols, fixed });
        }

        // sparsity graph over nodes
        let node_of = |g: usize| -> usize {
            match node_offsets.binary_search(&g) {
                Ok(i) => i,
                Err(i) => i - 1,
            }
        };
        let mut graph = BlockGraph::new(node_sizes.clone());
        for m in &maps {
            let mut nodes: Vec<usize> = m.glob.iter().map(|&g| node_of(g)).collect();
            nodes.dedup();
            graph.add_clique(&nodes);
        }
        let spec = OrderingSpec::nested_dissection(node_coords, Some(first));
        let sym = Arc::new(Symbolic::analyse(graph, &spec)?);

        // pressure integrals, field mass matrices and penalty edges
        let nf = layout.nf;
        let mut border = vec![0.0; ndof];
        let mut mass = Vec::with_capacity(active.len());
        let mut reflective = Vec::with_capacity(active.len());
        for &k in &active {
            let geo = ElementGeometry::new(mesh, kernels, k);
            let rt = kernels.rule(geo.curved);
            let mut mk = vec![0.0; nf * nf];
            let off = node_offsets[field_node[k]] + layout.field_offset(fld::P);
            for (q, &w) in geo.w.iter().enumerate() {
                let phi = &rt.field.values[q * nf..(q + 1) * nf];
                for i in 0..nf {
                    border[off + i] += w * phi[i];
                    for j in 0..nf {
                        mk[i + j * nf] += w * phi[i] * phi[j];
                    }
                }
            }
            mass.push(mk);
            let el = &mesh.elements[k];
            reflective.push([0, 1, 2, 3].map(|e| mesh.edges[el.edges[e]].tag == EdgeTag::Reflective));
        }
        let pin = node_offsets[field_node[active[0]]] + layout.field_offset(fld::P);

        Ok(Self {
            layout,
            ndof,
            node_offsets,
            node_sizes,
            sym,
            field_node,
            edge_dofs,
            vertex_dofs,
            maps,
            active_pos,
            border,
            pin,
            mass,
            reflective,
        })
    }

    /// Number of global unknowns (excluding the pressure multiplier).
    pub fn num_dofs(&self) -> usize {
        self.ndof
    }

    pub fn num_nodes(&self) -> usize {
        self.node_sizes.len()
    }

    pub fn symbolic(&self) -> &Arc<Symbolic> {
        &self.sym
    }

    /// Local-to-global maps, one per active element in mesh order.
    pub fn maps(&self) -> &[ElemMap] {
        &self.maps
    }

    pub fn active_position(&self, elem: usize) -> Option<usize> {
        self.active_pos.get(elem).copied().filter(|&p| p != usize::MAX)
    }

    /// First global index of an active element's field coefficients.
    pub fn field_offset(&self, elem: usize) -> usize {
        self.node_offsets[self.field_node[elem]]
    }

    /// Integrals of the pressure basis functions over their elements, as a
    /// global vector.
    pub fn pressure_border(&self) -> &[f64] {
        &self.border
    }

    pub fn pin(&self) -> usize {
        self.pin
    }

    /// Field mass matrix (scalar basis) of the element at active position `pos`.
    pub fn field_mass(&self, pos: usize) -> &[f64] {
        &self.mass[pos]
    }

    pub fn reflective_edges(&self, pos: usize) -> [bool; 4] {
        self.reflective[pos]
    }

    pub fn edge_dofs(&self, edge: usize) -> Option<&[EntityDof]> {
        self.edge_dofs.get(&edge).map(Vec::as_slice)
    }

    pub fn vertex_dofs(&self, v: usize) -> Option<[EntityDof; 2]> {
        self.vertex_dofs.get(&v).copied()
    }

    /// Node containing global unknown `g`.
    pub fn node_of(&self, g: usize) -> usize {
        match self.node_offsets.binary_search(&g) {
            Ok(mut i) => {
                while self.node_sizes[i] == 0 {
                    i += 1;
                }
                i
            }
            Err(i) => i - 1,
        }
    }

    pub fn node_offset(&self, node: usize) -> usize {
        self.node_offsets[node]
    }

    pub fn node_size(&self, node: usize) -> usize {
        self.node_sizes[node]
    }
}

/// Restriction matrices for the four child placements on a parent edge.
struct Restrictions {
    trace: HashMap<(i8, i8), DMatrix<f64>>,
    flux: HashMap<(i8, i8), DMatrix<f64>>,
}

impl Restrictions {
    fn new(trace: &Basis, flux: &Basis) -> Self {
        let keys = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        let mk = |b: &Basis| keys.iter().map(|&(a, c)| ((a, c), restriction_matrix(b, a as f64, c as f64))).collect();
        Self { trace: mk(trace), flux: mk(flux) }
    }
}

struct Resolver<'a> {
    mesh: &'a Mesh,
    edge_dofs: &'a BTreeMap<usize, Vec<EntityDof>>,
    vertex_dofs: &'a BTreeMap<usize, [EntityDof; 2]>,
    restr: &'a Restrictions,
    layout: Layout,
}

impl Resolver<'_> {
    /// Parent placement `(s0, s1)` of a constrained child edge.
    fn placement(&self, edge: usize) -> (usize, (i8, i8)) {
        let (parent, _) = self.mesh.edges[edge].parent.expect("constrained edge has a parent");
        let pe = &self.mesh.edges[parent];
        let mid = pe.mid.expect("parent edge was split");
        let s = |v: usize| -> i8 {
            if v == pe.v[0] {
                -1
            } else if v == pe.v[1] {
                1
            } else {
                debug_assert_eq!(v, mid);
                0
            }
        };
        let [a, b] = self.mesh.edges[edge].v;
        (parent, (s(a), s(b)))
    }

    fn vertex(&self, v: usize, c: usize) -> Result<LinComb> {
        if let Some(d) = self.vertex_dofs.get(&v) {
            return Ok(LinComb::of(d[c]));
        }
        let e = self.mesh.vertices[v].parent_edge.ok_or_else(|| Error::Layout(format!("vertex {v} has no unknowns and is not hanging")))?;
        let parent = self.trace(e, c)?;
        let (vals, _) = edge_basis(self.layout.orders.trace_order(), false).eval_1d(0.0);
        let mut acc = LinComb::default();
        for (j, p) in parent.iter().enumerate() {
            acc.axpy(vals[j], p);
        }
        Ok(acc)
    }

    fn trace(&self, edge: usize, c: usize) -> Result<Vec<LinComb>> {
        if let Some(d) = self.edge_dofs.get(&edge) {
            let nb = self.layout.ntr - 2;
            let [a, b] = self.mesh.edges[edge].v;
            let mut out = vec![self.vertex(a, c)?, self.vertex(b, c)?];
            out.extend(d[c * nb..(c + 1) * nb].iter().map(|&x| LinComb::of(x)));
            return Ok(out);
        }
        let (parent, key) = self.placement(edge);
        let pv = self.trace(parent, c)?;
        Ok(mat_apply(&self.restr.trace[&key], &pv))
    }

    fn flux(&self, edge: usize, c: usize) -> Result<Vec<LinComb>> {
        let nfl = self.layout.nfl;
        if let Some(d) = self.edge_dofs.get(&edge) {
            let base = 2 * (self.layout.ntr - 2) + c * nfl;
            return Ok(d[base..base + nfl].iter().map(|&x| LinComb::of(x)).collect());
        }
        let (parent, key) = self.placement(edge);
        let pv = self.flux(parent, c)?;
        let mut out = mat_apply(&self.restr.flux[&key], &pv);
        // a child running against its parent has the opposite normal
        if key.1 < key.0 {
            for v in &mut out {
                let mut neg = LinComb::default();
                neg.axpy(-1.0, v);
                *v = neg;
            }
        }
        Ok(out)
    }
}

/// Current iterate: field coefficients per element id (empty when
/// inactive) and interface values as a global vector.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteState {
    pub fields: Vec<Vec<f64>>,
    pub iface: Vec<f64>,
}

impl DiscreteState {
    pub fn zero(mesh: &Mesh, dofs: &DofMap) -> Self {
        let nf = dofs.layout.num_field_dofs();
        let mut fields = vec![Vec::new(); mesh.elements.len()];
        for &k in mesh.active() {
            fields[k] = vec![0.0; nf];
        }
        Self { fields, iface: vec![0.0; dofs.num_dofs()] }
    }

    /// Local trial vector of the element at active position `pos`, with the
    /// field part taken from `fields` and the interface from `iface`.
    pub fn local_vector(&self, dofs: &DofMap, pos: usize) -> Vec<f64> {
        let map = &dofs.maps[pos];
        let mut u = map.gather(&self.iface);
        let nf = dofs.layout.num_field_dofs();
        u[..nf].copy_from_slice(&self.fields[map.elem]);
        u
    }

    /// Transfers the state to a refined mesh: field coefficients are
    /// injected exactly into descendants, interface values start at zero.
    pub fn prolongate(&self, new_mesh: &Mesh, new_dofs: &DofMap) -> Self {
        let layout = new_dofs.layout;
        let p = layout.orders.p;
        let basis1d = edge_basis(p, false);
        let n1 = p + 1;
        let nf = layout.nf;
        let mut fields = vec![Vec::new(); new_mesh.elements.len()];
        for &k in new_mesh.active() {
            if k < self.fields.len() && !self.fields[k].is_empty() {
                fields[k] = self.fields[k].clone();
                continue;
            }
            let mut anc = new_mesh.elements[k].parent;
            while let Some(a) = anc {
                if a < self.fields.len() && !self.fields[a].is_empty() {
                    break;
                }
                anc = new_mesh.elements[a].parent;
            }
            let Some(a) = anc else {
                fields[k] = vec![0.0; layout.num_field_dofs()];
                continue;
            };
            let [ca, cb, ch] = new_mesh.elements[k].sub;
            let [pa, pb, ph] = new_mesh.elements[a].sub;
            let sx = -1.0 + 2.0 * (ca - pa) / ph;
            let sy = -1.0 + 2.0 * (cb - pb) / ph;
            let len = 2.0 * ch / ph;
            let rx = restriction_matrix(&basis1d, sx, sx + len);
            let ry = restriction_matrix(&basis1d, sy, sy + len);
            let parent = &self.fields[a];
            let mut out = vec![0.0; layout.num_field_dofs()];
            for comp in 0..NUM_FIELDS {
                let src = &parent[comp * nf..(comp + 1) * nf];
                let dst = &mut out[comp * nf..(comp + 1) * nf];
                for b2 in 0..n1 {
                    for a2 in 0..n1 {
                        let mut s = 0.0;
                        for b1 in 0..n1 {
                            for a1 in 0..n1 {
                                s += rx[(a2, a1)] * ry[(b2, b1)] * src[a1 + n1 * b1];
                            }
                        }
                        dst[a2 + n1 * b2] = s;
                    }
                }
            }
            fields[k] = out;
        }
        Self { fields, iface: vec![0.0; new_dofs.num_dofs()] }
    }

    /// State whose fields are the element-wise L² projections of `f`, which
    /// returns the ten field components at a point. Interface values are zero.
    pub fn project(mesh: &Mesh, kernels: &Kernels, dofs: &DofMap, f: impl Fn([f64; 2]) -> [f64; NUM_FIELDS]) -> Self {
        let mut state = Self::zero(mesh, dofs);
        let nf = dofs.layout.nf;
        for &k in mesh.active() {
            let geo = ElementGeometry::new(mesh, kernels, k);
            let rt = kernels.rule(geo.curved);
            let mut m = DMatrix::<f64>::zeros(nf, nf);
            let mut r = DMatrix::<f64>::zeros(nf, NUM_FIELDS);
            for (q, &w) in geo.w.iter().enumerate() {
                let phi = &rt.field.values[q * nf..(q + 1) * nf];
                let fx = f(geo.x[q]);
                for i in 0..nf {
                    for j in 0..nf {
                        m[(i, j)] += w * phi[i] * phi[j];
                    }
                    for c in 0..NUM_FIELDS {
                        r[(i, c)] += w * phi[i] * fx[c];
                    }
                }
            }
            let sol = m.cholesky().expect("field mass matrix is SPD").solve(&r);
            for c in 0..NUM_FIELDS {
                for i in 0..nf {
                    state.fields[k][c * nf + i] = sol[(i, c)];
                }
            }
        }
        state
    }

    /// Field values at the reference point `xi` of element `elem`.
    pub fn eval_fields(&self, dofs: &DofMap, elem: usize, xi: [f64; 2]) -> [f64; NUM_FIELDS] {
        let nf = dofs.layout.nf;
        let (phi, _) = crate::spaces::field_basis(dofs.layout.orders.p).eval_2d(xi[0], xi[1]);
        let f = &self.fields[elem];
        std::array::from_fn(|c| (0..nf).map(|i| f[c * nf + i] * phi[i]).sum())
    }

    /// Squared L² norm of all field components over the mesh.
    pub fn field_norm_sq(&self, mesh: &Mesh, dofs: &DofMap) -> f64 {
        let nf = dofs.layout.nf;
        let mut s = 0.0;
        for (pos, &k) in mesh.active().iter().enumerate() {
            let m = dofs.field_mass(pos);
            let f = &self.fields[k];
            for c in 0..NUM_FIELDS {
                let v = &f[c * nf..(c + 1) * nf];
                for i in 0..nf {
                    for j in 0..nf {
                        s += v[i] * m[i + j * nf] * v[j];
                    }
                }
            }
        }
        s
    }
}

/// One element's full local system (kept for diagnostics and tests).
#[derive(Clone, Debug)]
pub struct LocalSystem {
    pub elem: usize,
    pub b: Vec<f64>,
    pub g: Vec<f64>,
    pub l: Vec<f64>,
    pub condensed: Condensed,
    pub pen_rows: Vec<f64>,
    pub pen_rhs: Vec<f64>,
}

impl LocalSystem {
    /// Squared least-squares functional of the local vector `u`, including
    /// the penalty rows.
    pub fn functional(&self, u: &[f64]) -> f64 {
        let r = self.condensed.residual_norm(u);
        let mut s = r * r;
        let np = self.pen_rhs.len();
        for i in 0..np {
            let mut v = self.pen_rhs[i];
            for (j, uj) in u.iter().enumerate() {
                v -= self.pen_rows[i + j * np] * uj;
            }
            s += v * v;
        }
        s
    }

    /// `A_K` and `f_K` including the penalty rows.
    pub fn stiffness(&self) -> (Vec<f64>, Vec<f64>) {
        let c = &self.condensed;
        let mut a = c.a.clone();
        let mut f = c.f.clone();
        let np = self.pen_rhs.len();
        if np > 0 {
            let n = c.n_trial;
            gemm(Op::T, Op::N, n, n, np, 1.0, &self.pen_rows, np, &self.pen_rows, np, 1.0, &mut a, n);
            gemm(Op::T, Op::N, n, 1, np, 1.0, &self.pen_rows, np, &self.pen_rhs, np, 1.0, &mut f, n);
        }
        (a, f)
    }
}

/// Builds the local system of the element at active position `pos`, with
/// the background taken from `state`.
pub fn element_system(
    mesh: &Mesh,
    kernels: &Kernels,
    params: &ModelParams,
    dofs: &DofMap,
    state: &DiscreteState,
    pos: usize,
    penalty: Option<f64>,
) -> Result<LocalSystem> {
    let elem = dofs.maps[pos].elem;
    let geo = ElementGeometry::new(mesh, kernels, elem);
    let pen = penalty.map(|weight| PenaltySpec { weight, edges: dofs.reflective_edges(pos) });
    let m = local_matrices(kernels, &geo, params, &state.fields[elem], pen.as_ref());
    let lay = &kernels.layout;
    let condensed = condense_local(elem, &m.b, &m.g, &m.l, lay.test_dim(), lay.trial_dim())?;
    Ok(LocalSystem { elem, b: m.b, g: m.g, l: m.l, condensed, pen_rows: m.pen_rows, pen_rhs: m.pen_rhs })
}

/// Local systems of every active element.
pub fn local_systems(
    mesh: &Mesh,
    kernels: &Kernels,
    params: &ModelParams,
    dofs: &DofMap,
    state: &DiscreteState,
    penalty: Option<f64>,
) -> Result<Vec<LocalSystem>> {
    (0..dofs.maps.len()).map(|pos| element_system(mesh, kernels, params, dofs, state, pos, penalty)).collect()
}

/// Pressure-mean border of the global system.
#[derive(Clone, Debug)]
pub struct Border {
    pub c: Vec<f64>,
    pub rhs: f64,
    /// unknown whose diagonal is shifted to remove the pressure null mode
    pub pin: Option<usize>,
}

/// Assembled global system `[[A, c], [cᵀ, 0]]`.
pub struct GlobalSystem {
    pub matrix: BlockMatrix,
    pub rhs: Vec<f64>,
    pub border: Option<Border>,
}

/// Result of a streamed assembly.
pub struct Assembled {
    pub system: GlobalSystem,
    /// `η_K` of the state the background was taken from, per active position
    pub indicators: Vec<f64>,
}

/// Adds one element's contribution `Pᵀ A P`, `Pᵀ (f − A fixed)`.
fn scatter(matrix: &mut BlockMatrix, rhs: &mut [f64], dofs: &DofMap, map: &ElemMap, a: &[f64], f: &[f64]) {
    let n = map.cols.len();
    let m = map.glob.len();
    let p = map.dense_p();
    let mut feff = f.to_vec();
    gemm(Op::N, Op::N, n, 1, n, -1.0, a, n, &map.fixed, n, 1.0, &mut feff, n);
    let mut ap = vec![0.0; n * m];
    gemm(Op::N, Op::N, n, m, n, 1.0, a, n, &p, n, 0.0, &mut ap, n);
    let mut at = vec![0.0; m * m];
    gemm(Op::T, Op::N, m, m, n, 1.0, &p, n, &ap, n, 0.0, &mut at, m);
    let mut ft = vec![0.0; m];
    gemm(Op::T, Op::N, m, 1, n, 1.0, &p, n, &feff, n, 0.0, &mut ft, m);
    for (k, &g) in map.glob.iter().enumerate() {
        rhs[g] += ft[k];
    }
    // group the touched unknowns by node (glob is sorted, nodes are contiguous)
    let mut groups: Vec<(usize, usize, usize)> = Vec::new(); // (node, start, len)
    for (k, &g) in map.glob.iter().enumerate() {
        let node = dofs.node_of(g);
        match groups.last_mut() {
            Some(last) if last.0 == node => last.2 += 1,
            _ => groups.push((node, k, 1)),
        }
    }
    for (gi, &(na, sa, la)) in groups.iter().enumerate() {
        let (oa, za) = (dofs.node_offset(na), dofs.node_size(na));
        for &(nb, sb, lb) in &groups[..=gi] {
            let (ob, zb) = (dofs.node_offset(nb), dofs.node_size(nb));
            let mut blk = vec![0.0; za * zb];
            for c in 0..lb {
                let cc = map.glob[sb + c] - ob;
                for r in 0..la {
                    let rr = map.glob[sa + r] - oa;
                    blk[rr + cc * za] = at[(sa + r) + (sb + c) * m];
                }
            }
            matrix.add_block(na, nb, &blk);
        }
    }
}

/// Streams over the active elements, building, condensing and scattering
/// each local system. The background fields and the current pressure and
/// interface values are taken from `state`; the indicators measure the
/// residual of that state.
pub fn assemble(
    mesh: &Mesh,
    kernels: &Kernels,
    params: &ModelParams,
    dofs: &DofMap,
    state: &DiscreteState,
    penalty: Option<f64>,
) -> Result<Assembled> {
    let mut matrix = BlockMatrix::zeros(Arc::clone(&dofs.sym));
    let mut rhs = vec![0.0; dofs.ndof];
    let mut indicators = Vec::with_capacity(dofs.maps.len());
    let lay = &kernels.layout;
    for pos in 0..dofs.maps.len() {
        let ls = element_system(mesh, kernels, params, dofs, state, pos, penalty)?;
        let mut u = state.local_vector(dofs, pos);
        for c in [fld::U1, fld::U2, fld::L, fld::L + 1, fld::L + 2, fld::L + 3, fld::T11, fld::T12, fld::T22] {
            let off = lay.field_offset(c);
            u[off..off + lay.nf].iter_mut().for_each(|v| *v = 0.0);
        }
        indicators.push(ls.condensed.residual_norm(&u));
        let (a, f) = ls.stiffness();
        scatter(&mut matrix, &mut rhs, dofs, &dofs.maps[pos], &a, &f);
    }
    let border = Border { c: dofs.border.clone(), rhs: 0.0, pin: Some(dofs.pin) };
    Ok(Assembled { system: GlobalSystem { matrix, rhs, border: Some(border) }, indicators })
}

/// Assembles already built local systems (used by diagnostics).
pub fn assemble_locals(dofs: &DofMap, locals: &[LocalSystem]) -> GlobalSystem {
    let mut matrix = BlockMatrix::zeros(Arc::clone(&dofs.sym));
    let mut rhs = vec![0.0; dofs.ndof];
    for (pos, ls) in locals.iter().enumerate() {
        let (a, f) = ls.stiffness();
        scatter(&mut matrix, &mut rhs, dofs, &dofs.maps[pos], &a, &f);
    }
    GlobalSystem { matrix, rhs, border: Some(Border { c: dofs.border.clone(), rhs: 0.0, pin: Some(dofs.pin) }) }
}

/// Outcome of [`solve_spd`].
#[derive(Clone, Debug)]
pub struct SolveReport {
    /// relative residual of the (bordered) system
    pub residual: f64,
    pub refinement_steps: usize,
    pub multiplier: f64,
    pub factor_entries: usize,
}

/// Relative residual accepted by [`solve_spd`].
pub const SOLVE_TOL: f64 = 1e-10;

/// Solves the assembled system by sparse Cholesky.
///
/// With a border, the system `[[A, c], [cᵀ, 0]] [x; μ] = [f; g]` is solved by
/// block elimination. When a pin is given, `A` may be singular along one
/// direction not orthogonal to the pin unit vector `e`; the factor is then
/// taken of `A + s e eᵀ` (with `s` the mean diagonal) and the shift is undone
/// with a second multiplier. Up to three rounds of iterative refinement are
/// applied against the unshifted operator.
pub fn solve_spd(system: GlobalSystem) -> Result<(Vec<f64>, SolveReport)> {
    let GlobalSystem { mut matrix, rhs, border } = system;
    let n = rhs.len();
    let op = matrix.to_operator();
    let factor_entries = matrix.symbolic().factor_entries();
    let (c, g, pin) = match &border {
        Some(b) => (Some(b.c.clone()), b.rhs, b.pin),
        None => (None, 0.0, None),
    };
    let shift = op.mean_diagonal();
    if let Some(p) = pin {
        matrix.add_entry(p, p, shift);
    }
    let factor = matrix.factor()?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    // auxiliary solves A_s⁻¹ c and A_s⁻¹ e
    let mut aux: Vec<Vec<f64>> = Vec::new();
    if let Some(c) = &c {
        let mut yc = c.clone();
        factor.solve(&mut yc, 1);
        aux.push(yc);
        if let Some(p) = pin {
            let mut ye = vec![0.0; n];
            ye[p] = 1.0;
            factor.solve(&mut ye, 1);
            aux.push(ye);
        }
    }
    let elim = |f: &[f64], gg: f64| -> (Vec<f64>, f64) {
        let mut yf = f.to_vec();
        factor.solve(&mut yf, 1);
        match (&c, pin) {
            (None, _) => (yf, 0.0),
            (Some(c), None) => {
                let yc = &aux[0];
                let mu = (dot(c, &yf) - gg) / dot(c, yc);
                let x = yf.iter().zip(yc).map(|(a, b)| a - mu * b).collect();
                (x, mu)
            }
            (Some(c), Some(p)) => {
                let (yc, ye) = (&aux[0], &aux[1]);
                let m11 = dot(c, yc);
                let m12 = dot(c, ye);
                let m21 = yc[p];
                let m22 = ye[p] - 1.0 / shift;
                let r1 = dot(c, &yf) - gg;
                let r2 = yf[p];
                let det = m11 * m22 - m12 * m21;
                let mu = (r1 * m22 - m12 * r2) / det;
                let nu = (m11 * r2 - m21 * r1) / det;
                let x = (0..n).map(|i| yf[i] - mu * yc[i] - nu * ye[i]).collect();
                (x, mu)
            }
        }
    };
    let residual = |x: &[f64], mu: f64| -> (Vec<f64>, f64) {
        let ax = op.apply(x);
        let mut r: Vec<f64> = (0..n).map(|i| rhs[i] - ax[i]).collect();
        let mut rg = 0.0;
        if let Some(c) = &c {
            for i in 0..n {
                r[i] -= c[i] * mu;
            }
            rg = g - dot(c, x);
        }
        (r, rg)
    };
    let bnorm = (dot(&rhs, &rhs) + g * g).sqrt();
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], SolveReport { residual: 0.0, refinement_steps: 0, multiplier: 0.0, factor_entries }));
    }
    let (mut x, mut mu) = elim(&rhs, g);
    let mut steps = 0;
    let mut rel;
    loop {
        let (r, rg) = residual(&x, mu);
        rel = (dot(&r, &r) + rg * rg).sqrt() / bnorm;
        if rel <= 1e-14 || steps == 3 {
            break;
        }
        let (dx, dmu) = elim(&r, rg);
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
        mu += dmu;
        steps += 1;
    }
    if !(rel <= SOLVE_TOL) {
        return Err(Error::SolveAccuracy { residual: rel, tol: SOLVE_TOL });
    }
    Ok((x, SolveReport { residual: rel, refinement_steps: steps, multiplier: mu, factor_entries }))
}

/// Squared least-squares functional `Σ_K ‖l_K − B_K u_K‖²` (plus penalty
/// rows) of the global vector `x`.
pub fn total_functional(dofs: &DofMap, locals: &[LocalSystem], x: &[f64]) -> f64 {
    locals.iter().zip(&dofs.maps).map(|(ls, map)| ls.functional(&map.gather(x))).sum()
}

/// Indicators `η_K` of the global vector `x` (penalty rows excluded).
pub fn energy_indicators(dofs: &DofMap, locals: &[LocalSystem], x: &[f64]) -> Vec<f64> {
    locals.iter().zip(&dofs.maps).map(|(ls, map)| ls.condensed.residual_norm(&map.gather(x))).collect()
}

/// Perturbs the minimizer `x` in `trials` random admissible directions
/// (free unknowns only, respecting the pressure-mean constraint) and
/// returns the smallest relative change of the functional; a minimizer
/// gives a value no less than about `-1e-10`.
pub fn residual_optimality_check(dofs: &DofMap, locals: &[LocalSystem], x: &[f64], trials: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let j0 = total_functional(dofs, locals, x);
    let c = dofs.pressure_border();
    let cc: f64 = c.iter().map(|v| v * v).sum();
    let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let mut worst = f64::INFINITY;
    for _ in 0..trials {
        let mut d: Vec<f64> = (0..x.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cd: f64 = c.iter().zip(&d).map(|(a, b)| a * b).sum();
        for (di, ci) in d.iter_mut().zip(c) {
            *di -= cd / cc * ci;
        }
        let scale = rng.gen_range(1e-6..1e-1) * xnorm / d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let xp: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + scale * b).collect();
        let j1 = total_functional(dofs, locals, &xp);
        worst = worst.min((j1 - j0) / j0.max(f64::MIN_POSITIVE));
    }
    worst
}

/// Writes the lower triangle of `A` in Matrix Market coordinate format.
pub fn write_matrix_market(matrix: &BlockMatrix, path: &Path) -> Result<()> {
    let op = matrix.to_operator();
    let trip = op.lower_triplets();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "%%MatrixMarket matrix coordinate real symmetric")?;
    writeln!(f, "{} {} {}", op.dim(), op.dim(), trip.len())?;
    for (i, j, v) in trip {
        writeln!(f, "{} {} {:.17e}", i + 1, j + 1, v)?;
    }
    f.flush()?;
    Ok(())
}
