//! 1-irregular quadrilateral meshes with exact arc edges and hanging nodes.
//!
//! The mesh keeps its whole refinement tree. Elements that have no children
//! are *active*. An edge is active when it is an edge of an active element;
//! an active edge whose parent edge is also active is *constrained* (a
//! hanging edge), and its interface values are slaved to the parent.
//!
//! Edge orientation runs from the lower to the higher vertex id. Element
//! vertices are counterclockwise and local edge `e` runs from vertex `e` to
//! vertex `e+1`.

pub mod geometry;
mod io;

use std::collections::{BTreeSet, HashMap};

pub use geometry::{BenchGeometry, Curve, RootMap};
pub use io::{load_mesh, write_vtk};

use crate::error::Error;
use crate::spaces::gauss_rule;

/// Boundary classification of an edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeTag {
    Interior,
    Inflow,
    Outflow,
    Wall,
    Cylinder,
    Reflective,
}

impl EdgeTag {
    pub fn name(self) -> &'static str {
        match self {
            EdgeTag::Interior => "interior",
            EdgeTag::Inflow => "inflow",
            EdgeTag::Outflow => "outflow",
            EdgeTag::Wall => "wall",
            EdgeTag::Cylinder => "cylinder",
            EdgeTag::Reflective => "reflective",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "interior" => EdgeTag::Interior,
            "inflow" => EdgeTag::Inflow,
            "outflow" => EdgeTag::Outflow,
            "wall" => EdgeTag::Wall,
            "cylinder" => EdgeTag::Cylinder,
            "reflective" => EdgeTag::Reflective,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vertex {
    pub x: [f64; 2],
    /// Edge whose split created this vertex.
    pub parent_edge: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    /// Endpoints, lower id first.
    pub v: [usize; 2],
    pub tag: EdgeTag,
    /// `(parent edge, child index)`; child 0 is the half adjacent to the
    /// parent's first vertex.
    pub parent: Option<(usize, usize)>,
    pub children: Option<[usize; 2]>,
    pub mid: Option<usize>,
    /// Elements (at any level) having this edge as one of their own edges.
    pub elements: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    pub verts: [usize; 4],
    pub edges: [usize; 4],
    pub level: usize,
    pub parent: Option<usize>,
    pub children: Option<[usize; 4]>,
    pub root: usize,
    /// Sub-square of the root reference square: lower-left corner and side.
    pub sub: [f64; 3],
}

/// A hanging-edge constraint: the interface values on `child` are the
/// restriction of those on `parent` to half `child_index`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HangingConstraint {
    pub child: usize,
    pub parent: usize,
    pub child_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    pub elements: Vec<Element>,
    pub roots: Vec<RootMap>,
    /// Refined element ids, in the order they were split.
    pub history: Vec<usize>,
    /// Number of vertices given at construction (ids `0..root_vertices`).
    pub root_vertices: usize,
    active: Vec<usize>,
}

/// Reference midpoints of the four local edges.
const EDGE_MID: [[f64; 2]; 4] = [[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];

impl Mesh {
    /// Builds a mesh whose root elements are the given quadrilaterals.
    ///
    /// `arcs` lists vertex pairs joined by a circular arc. `tagger` receives
    /// the endpoints of each boundary edge and returns its tag.
    pub fn from_roots(
        points: Vec<[f64; 2]>,
        quads: Vec<[usize; 4]>,
        arcs: &[(usize, usize, Curve)],
        tagger: impl Fn([f64; 2], [f64; 2]) -> EdgeTag,
    ) -> Self {
        let arc_map: HashMap<(usize, usize), Curve> = arcs.iter().map(|&(a, b, c)| ((a.min(b), a.max(b)), c)).collect();
        let vertices: Vec<Vertex> = points.iter().map(|&x| Vertex { x, parent_edge: None }).collect();
        let mut edges: Vec<Edge> = Vec::new();
        let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut elements = Vec::new();
        let mut roots = Vec::new();
        for (k, q) in quads.iter().enumerate() {
            let mut q = *q;
            let area2: f64 = (0..4)
                .map(|i| {
                    let a = points[q[i]];
                    let b = points[q[(i + 1) % 4]];
                    a[0] * b[1] - a[1] * b[0]
                })
                .sum();
            if area2 < 0.0 {
                q = [q[0], q[3], q[2], q[1]];
            }
            let mut eids = [0; 4];
            let mut curves = [Curve::Line; 4];
            for e in 0..4 {
                let (a, b) = (q[e], q[(e + 1) % 4]);
                let key = (a.min(b), a.max(b));
                if let Some(c) = arc_map.get(&key) {
                    curves[e] = *c;
                }
                let id = *edge_ids.entry(key).or_insert_with(|| {
                    edges.push(Edge {
                        v: [key.0, key.1],
                        tag: EdgeTag::Interior,
                        parent: None,
                        children: None,
                        mid: None,
                        elements: Vec::new(),
                    });
                    edges.len() - 1
                });
                edges[id].elements.push(k);
                eids[e] = id;
            }
            roots.push(RootMap { corners: [points[q[0]], points[q[1]], points[q[2]], points[q[3]]], curves });
            elements.push(Element { verts: q, edges: eids, level: 0, parent: None, children: None, root: k, sub: [-1.0, -1.0, 2.0] });
        }
        for e in &mut edges {
            if e.elements.len() == 1 {
                e.tag = tagger(points[e.v[0]], points[e.v[1]]);
            }
        }
        let active = (0..elements.len()).collect();
        let root_vertices = vertices.len();
        Self { vertices, edges, elements, roots, history: Vec::new(), root_vertices, active }
    }

    /// Uniform `nx x ny` rectangle mesh of `[x0,x1] x [y0,y1]`; all boundary
    /// edges are tagged `Wall`.
    pub fn rect(nx: usize, ny: usize, extents: [[f64; 2]; 2]) -> Self {
        assert!(nx >= 1 && ny >= 1, "rect mesh needs nx, ny >= 1");
        let [[x0, x1], [y0, y1]] = extents;
        let mut pts = Vec::new();
        for j in 0..=ny {
            for i in 0..=nx {
                pts.push([x0 + (x1 - x0) * i as f64 / nx as f64, y0 + (y1 - y0) * j as f64 / ny as f64]);
            }
        }
        let id = |i: usize, j: usize| i + (nx + 1) * j;
        let mut quads = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                quads.push([id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        Self::from_roots(pts, quads, &[], |_, _| EdgeTag::Wall)
    }

    /// Active (leaf) element ids in increasing order.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn num_active(&self) -> usize {
        self.active.len()
    }

    pub fn is_leaf(&self, elem: usize) -> bool {
        self.elements[elem].children.is_none()
    }

    /// Physical point and Jacobian (row = physical coordinate) of `elem` at
    /// the reference point `xi`.
    pub fn ref_map_eval(&self, elem: usize, xi: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let el = &self.elements[elem];
        let [a, b, h] = el.sub;
        let rx = a + 0.5 * (xi[0] + 1.0) * h;
        let ry = b + 0.5 * (xi[1] + 1.0) * h;
        let (x, j) = self.roots[el.root].eval(rx, ry);
        let s = 0.5 * h;
        let mut x = x;
        // corners snap to the stored vertices
        if xi[0].abs() == 1.0 && xi[1].abs() == 1.0 {
            let idx = match (xi[0] > 0.0, xi[1] > 0.0) {
                (false, false) => 0,
                (true, false) => 1,
                (true, true) => 2,
                (false, true) => 3,
            };
            x = self.vertices[el.verts[idx]].x;
        }
        (x, [[j[0][0] * s, j[0][1] * s], [j[1][0] * s, j[1][1] * s]])
    }

    /// Whether the element's map is non-affine in a way that warrants the
    /// curved-element quadrature.
    pub fn is_curved(&self, elem: usize) -> bool {
        self.roots[self.elements[elem].root].is_curved()
    }

    /// `+1` if local edge `e` of `elem` runs along the global edge direction.
    pub fn edge_sign(&self, elem: usize, e: usize) -> f64 {
        let el = &self.elements[elem];
        let edge = &self.edges[el.edges[e]];
        if edge.v[0] == el.verts[e] {
            1.0
        } else {
            debug_assert_eq!(edge.v[1], el.verts[e]);
            -1.0
        }
    }

    /// An edge is active when some active element owns it.
    pub fn edge_is_active(&self, edge: usize) -> bool {
        self.edges[edge].elements.iter().any(|&k| self.is_leaf(k))
    }

    /// Active edge slaved to an active parent edge.
    pub fn edge_is_constrained(&self, edge: usize) -> bool {
        match self.edges[edge].parent {
            Some((p, _)) => self.edge_is_active(edge) && self.edge_is_active(p),
            None => false,
        }
    }

    /// Active edges carrying their own interface unknowns.
    pub fn edge_owns_dofs(&self, edge: usize) -> bool {
        self.edge_is_active(edge) && !self.edge_is_constrained(edge)
    }

    /// A vertex is hanging when it is the midpoint of an active edge.
    pub fn vertex_is_hanging(&self, v: usize) -> bool {
        match self.vertices[v].parent_edge {
            Some(e) => self.edge_is_active(e),
            None => false,
        }
    }

    /// Vertices of active elements, in increasing order.
    pub fn active_vertices(&self) -> Vec<usize> {
        let mut set = BTreeSet::new();
        for &k in &self.active {
            set.extend(self.elements[k].verts);
        }
        set.into_iter().collect()
    }

    /// Active edges in increasing id order.
    pub fn active_edges(&self) -> Vec<usize> {
        let mut set = BTreeSet::new();
        for &k in &self.active {
            set.extend(self.elements[k].edges);
        }
        set.into_iter().collect()
    }

    /// Current hanging-edge constraints.
    pub fn constraints(&self) -> Vec<HangingConstraint> {
        self.active_edges()
            .into_iter()
            .filter(|&e| self.edge_is_constrained(e))
            .map(|e| {
                let (p, ci) = self.edges[e].parent.expect("constrained edge has a parent");
                HangingConstraint { child: e, parent: p, child_index: ci }
            })
            .collect()
    }

    pub fn num_hanging_edges(&self) -> usize {
        self.constraints().len()
    }

    /// Element centroid (image of the reference centre).
    pub fn centroid(&self, elem: usize) -> [f64; 2] {
        self.ref_map_eval(elem, [0.0, 0.0]).0
    }

    /// Whether any edge of `elem` is tagged `tag`.
    pub fn has_tag(&self, elem: usize, tag: EdgeTag) -> bool {
        self.elements[elem].edges.iter().any(|&e| self.edges[e].tag == tag)
    }

    /// Area of one element by Gauss quadrature with `n` points per direction.
    pub fn element_area(&self, elem: usize, n: usize) -> f64 {
        let q = gauss_rule(n);
        let mut a = 0.0;
        for (i, &x) in q.points.iter().enumerate() {
            for (j, &y) in q.points.iter().enumerate() {
                let (_, jac) = self.ref_map_eval(elem, [x, y]);
                a += q.weights[i] * q.weights[j] * (jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0]);
            }
        }
        a
    }

    /// Total area of the active elements (arc-exact maps, 12-point rule).
    pub fn total_area(&self) -> f64 {
        self.active.iter().map(|&k| self.element_area(k, 12)).sum()
    }

    /// Returns a refined copy; see [`Mesh::refine_in_place`].
    pub fn refine(&self, marked: &[usize]) -> Mesh {
        let mut m = self.clone();
        m.refine_in_place(marked);
        m
    }

    /// Splits every marked active element into four children, together with
    /// the closure needed to keep the mesh 1-irregular.
    pub fn refine_in_place(&mut self, marked: &[usize]) {
        let todo = self.closure(marked);
        for k in todo {
            if self.is_leaf(k) {
                self.split(k);
            }
        }
        self.active = (0..self.elements.len()).filter(|&k| self.is_leaf(k)).collect();
    }

    /// The marked set extended until refining it keeps 1-irregularity.
    ///
    /// Refining `K` splits its edges; if one of them is already a hanging
    /// child of a coarser active neighbour's edge, that neighbour must be
    /// refined too.
    pub fn closure(&self, marked: &[usize]) -> BTreeSet<usize> {
        let mut set: BTreeSet<usize> = marked.iter().copied().filter(|&k| self.is_leaf(k)).collect();
        let mut stack: Vec<usize> = set.iter().copied().collect();
        while let Some(k) = stack.pop() {
            for &e in &self.elements[k].edges {
                if let Some((p, _)) = self.edges[e].parent {
                    for &n in &self.edges[p].elements {
                        if self.is_leaf(n) && set.insert(n) {
                            stack.push(n);
                        }
                    }
                }
            }
        }
        set
    }

    fn split_edge(&mut self, e: usize, mid_x: [f64; 2]) {
        if self.edges[e].children.is_some() {
            return;
        }
        let m = self.vertices.len();
        self.vertices.push(Vertex { x: mid_x, parent_edge: Some(e) });
        let [a, b] = self.edges[e].v;
        let tag = self.edges[e].tag;
        let c0 = self.edges.len();
        let mk = |x: usize, y: usize, ci: usize| Edge {
            v: [x.min(y), x.max(y)],
            tag,
            parent: Some((e, ci)),
            children: None,
            mid: None,
            elements: Vec::new(),
        };
        self.edges.push(mk(a, m, 0));
        self.edges.push(mk(m, b, 1));
        self.edges[e].children = Some([c0, c0 + 1]);
        self.edges[e].mid = Some(m);
    }

    /// Child of edge `e` that contains vertex `v`.
    fn half(&self, e: usize, v: usize) -> usize {
        let [c0, c1] = self.edges[e].children.expect("edge was split");
        if self.edges[c0].v.contains(&v) {
            c0
        } else {
            debug_assert!(self.edges[c1].v.contains(&v));
            c1
        }
    }

    fn split(&mut self, k: usize) {
        let el = self.elements[k].clone();
        for e in 0..4 {
            if self.edges[el.edges[e]].children.is_none() {
                let (x, _) = self.ref_map_eval(k, EDGE_MID[e]);
                self.split_edge(el.edges[e], x);
            }
        }
        let mids: Vec<usize> = el.edges.iter().map(|&e| self.edges[e].mid.unwrap()).collect();
        let c = self.vertices.len();
        let (cx, _) = self.ref_map_eval(k, [0.0, 0.0]);
        self.vertices.push(Vertex { x: cx, parent_edge: None });
        let mut inner = [0; 4];
        for e in 0..4 {
            inner[e] = self.edges.len();
            self.edges.push(Edge {
                v: [mids[e].min(c), mids[e].max(c)],
                tag: EdgeTag::Interior,
                parent: None,
                children: None,
                mid: None,
                elements: Vec::new(),
            });
        }
        let [v0, v1, v2, v3] = el.verts;
        let [e0, e1, e2, e3] = el.edges;
        let (m0, m1, m2, m3) = (mids[0], mids[1], mids[2], mids[3]);
        let [a, b, h] = el.sub;
        let hh = 0.5 * h;
        let kids: [([usize; 4], [usize; 4], [f64; 3]); 4] = [
            ([v0, m0, c, m3], [self.half(e0, v0), inner[0], inner[3], self.half(e3, v0)], [a, b, hh]),
            ([m0, v1, m1, c], [self.half(e0, v1), self.half(e1, v1), inner[1], inner[0]], [a + hh, b, hh]),
            ([c, m1, v2, m2], [inner[1], self.half(e1, v2), self.half(e2, v2), inner[2]], [a + hh, b + hh, hh]),
            ([m3, c, m2, v3], [inner[3], inner[2], self.half(e2, v3), self.half(e3, v3)], [a, b + hh, hh]),
        ];
        let first = self.elements.len();
        for (i, (verts, edges, sub)) in kids.into_iter().enumerate() {
            for &e in &edges {
                self.edges[e].elements.push(first + i);
            }
            self.elements.push(Element { verts, edges, level: el.level + 1, parent: Some(k), children: None, root: el.root, sub });
        }
        self.elements[k].children = Some([first, first + 1, first + 2, first + 3]);
        self.history.push(k);
    }

    /// Checks the structural invariants; returns every violation found.
    pub fn audit(&self) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        let q = gauss_rule(8);
        for &k in &self.active {
            'pts: for &x in &q.points {
                for &y in &q.points {
                    let (_, j) = self.ref_map_eval(k, [x, y]);
                    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                    if !(det > 0.0) {
                        errs.push(format!("element {k}: non-positive Jacobian {det:e}"));
                        break 'pts;
                    }
                }
            }
            let el = &self.elements[k];
            for e in 0..4 {
                let edge = &self.edges[el.edges[e]];
                let (a, b) = (el.verts[e], el.verts[(e + 1) % 4]);
                if !(edge.v == [a.min(b), a.max(b)]) {
                    errs.push(format!("element {k}: local edge {e} does not join its vertices"));
                }
                if edge.v[0] >= edge.v[1] {
                    errs.push(format!("edge {}: not oriented from lower to higher id", el.edges[e]));
                }
            }
        }
        for e in self.active_edges() {
            let edge = &self.edges[e];
            let leaves = edge.elements.iter().filter(|&&k| self.is_leaf(k)).count();
            let constrained = self.edge_is_constrained(e);
            let coarse_side = edge.children.map(|[c0, c1]| self.edge_is_active(c0) && self.edge_is_active(c1)).unwrap_or(false);
            if edge.tag == EdgeTag::Interior {
                let ok = leaves == 2 || (leaves == 1 && (constrained || coarse_side));
                if !ok {
                    errs.push(format!("interior edge {e}: {leaves} active elements, constrained={constrained}, coarse side={coarse_side}"));
                }
            } else if leaves != 1 {
                errs.push(format!("boundary edge {e}: {leaves} active elements"));
            }
            if let Some(ch) = edge.children {
                for c in ch {
                    if let Some(gc) = self.edges[c].children {
                        if gc.iter().any(|&g| self.edge_is_active(g)) {
                            errs.push(format!("edge {e}: active grandchildren (not 1-irregular)"));
                        }
                    }
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    /// Writes the mesh in the plain-text format read by [`load_mesh`].
    pub fn dump(&self) -> String {
        io::dump(self)
    }
}

/// The 36-element confined-cylinder mesh of the half channel.
///
/// Layout: two layers of six sectors each form an O-grid ring between the
/// half-cylinder and the box `[-2R, 2R] x [0, H]`; an upstream and a
/// downstream block of `2 x 6` elements each are graded towards the ring.
pub fn build_initial_mesh(geom: &BenchGeometry) -> Result<Mesh, Error> {
    geom.validate()?;
    let r = geom.cylinder_radius;
    let h = geom.half_channel_height;
    let [cx, cy] = geom.cylinder_center;
    let bx = 2.0 * r; // half width of the ring box
    let ring_frac = 0.4;
    let mut pts: Vec<[f64; 2]> = Vec::new();
    let push = |p: [f64; 2], pts: &mut Vec<[f64; 2]>| {
        pts.push(p);
        pts.len() - 1
    };
    // outer points of the ring box, angles 180, 150, ..., 0 degrees
    let ymid = 0.5 * h;
    let outer =
        [[cx - bx, cy], [cx - bx, cy + ymid], [cx - bx, cy + h], [cx, cy + h], [cx + bx, cy + h], [cx + bx, cy + ymid], [cx + bx, cy]];
    let mut arc_ids = [0; 7];
    let mut mid_ids = [0; 7];
    let mut out_ids = [0; 7];
    for k in 0..7 {
        let th = std::f64::consts::PI * (1.0 - k as f64 / 6.0);
        let a = if k == 0 {
            [cx - r, cy]
        } else if k == 6 {
            [cx + r, cy]
        } else if k == 3 {
            [cx, cy + r]
        } else {
            [cx + r * th.cos(), cy + r * th.sin()]
        };
        let o = outer[k];
        let m = [a[0] + ring_frac * (o[0] - a[0]), a[1] + ring_frac * (o[1] - a[1])];
        arc_ids[k] = push(a, &mut pts);
        mid_ids[k] = push(m, &mut pts);
        out_ids[k] = push(o, &mut pts);
    }
    let mut quads = Vec::new();
    let mut arcs = Vec::new();
    for k in 0..6 {
        quads.push([arc_ids[k], arc_ids[k + 1], mid_ids[k + 1], mid_ids[k]]);
        quads.push([mid_ids[k], mid_ids[k + 1], out_ids[k + 1], out_ids[k]]);
        arcs.push((arc_ids[k], arc_ids[k + 1], Curve::Arc { center: [cx, cy], radius: r }));
    }
    // graded blocks: 6 columns x 2 rows on each side
    let ncol = 6;
    let block = |side: f64, len: f64, pts: &mut Vec<[f64; 2]>, quads: &mut Vec<[usize; 4]>, edge_col: [usize; 3]| {
        let mut cols: Vec<[usize; 3]> = vec![edge_col];
        for i in 1..=ncol {
            let s = (i as f64 / ncol as f64).powf(1.5);
            let x = cx + side * (bx + (len - bx) * s);
            let ids = [cy, cy + ymid, cy + h].map(|y| {
                pts.push([x, y]);
                pts.len() - 1
            });
            cols.push(ids);
        }
        for i in 0..ncol {
            for j in 0..2 {
                quads.push([cols[i][j], cols[i + 1][j], cols[i + 1][j + 1], cols[i][j + 1]]);
            }
        }
    };
    block(-1.0, geom.upstream_length, &mut pts, &mut quads, [out_ids[0], out_ids[1], out_ids[2]]);
    block(1.0, geom.downstream_length, &mut pts, &mut quads, [out_ids[6], out_ids[5], out_ids[4]]);
    let g = geom.clone();
    let tagger = move |a: [f64; 2], b: [f64; 2]| classify_boundary(&g, a, b);
    Ok(Mesh::from_roots(pts, quads, &arcs, tagger))
}

fn classify_boundary(g: &BenchGeometry, a: [f64; 2], b: [f64; 2]) -> EdgeTag {
    let tol = 1e-9 * g.upstream_length.max(g.half_channel_height);
    let [cx, cy] = g.cylinder_center;
    let on_circle = |p: [f64; 2]| ((p[0] - cx).hypot(p[1] - cy) - g.cylinder_radius).abs() < tol;
    if on_circle(a) && on_circle(b) && (a[1] - cy).max(b[1] - cy) > tol {
        EdgeTag::Cylinder
    } else if (a[1] - cy).abs() < tol && (b[1] - cy).abs() < tol {
        EdgeTag::Reflective
    } else if (a[1] - cy - g.half_channel_height).abs() < tol && (b[1] - cy - g.half_channel_height).abs() < tol {
        EdgeTag::Wall
    } else if (a[0] - g.x_min()).abs() < tol && (b[0] - g.x_min()).abs() < tol {
        EdgeTag::Inflow
    } else if (a[0] - g.x_max()).abs() < tol && (b[0] - g.x_max()).abs() < tol {
        EdgeTag::Outflow
    } else {
        EdgeTag::Interior
    }
}
