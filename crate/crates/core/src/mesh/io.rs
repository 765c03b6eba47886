//! Plain-text mesh dump/load and VTK export.
//!
//! The text format records how the mesh was built, so that loading replays
//! it exactly:
//!
//! ```text
//! viscodpg-mesh 1
//! points <n>            followed by n lines "x y"
//! quads <m>             followed by m lines "v0 v1 v2 v3" (counterclockwise)
//! arcs <k>              followed by k lines "a b cx cy r"
//! boundary <b>          followed by b lines "a b tag"
//! history <h>           followed by h lines "element-id" (split order)
//! ```
//!
//! After the `history` block, informational sections `vertices`, `elements`
//! and `edges` describe the resulting active mesh. They are checked for
//! consistency on load but not needed to rebuild it.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use super::{Curve, EdgeTag, Mesh};
use crate::error::Error;

pub(super) fn dump(mesh: &Mesh) -> String {
    let mut s = String::from("viscodpg-mesh 1\n");
    let nroot_pts = mesh.root_vertices;
    writeln!(s, "points {nroot_pts}").unwrap();
    for v in &mesh.vertices[..nroot_pts] {
        writeln!(s, "{:.17e} {:.17e}", v.x[0], v.x[1]).unwrap();
    }
    let roots: Vec<usize> = (0..mesh.elements.len()).filter(|&k| mesh.elements[k].parent.is_none()).collect();
    writeln!(s, "quads {}", roots.len()).unwrap();
    for &k in &roots {
        let v = mesh.elements[k].verts;
        writeln!(s, "{} {} {} {}", v[0], v[1], v[2], v[3]).unwrap();
    }
    let mut arcs = Vec::new();
    let mut bnd = Vec::new();
    for &k in &roots {
        let el = &mesh.elements[k];
        for e in 0..4 {
            let (a, b) = (el.verts[e], el.verts[(e + 1) % 4]);
            if let Curve::Arc { center, radius } = mesh.roots[el.root].curves[e] {
                arcs.push(format!("{a} {b} {:.17e} {:.17e} {:.17e}", center[0], center[1], radius));
            }
            let tag = mesh.edges[el.edges[e]].tag;
            if tag != EdgeTag::Interior {
                bnd.push(format!("{a} {b} {}", tag.name()));
            }
        }
    }
    writeln!(s, "arcs {}", arcs.len()).unwrap();
    for a in arcs {
        writeln!(s, "{a}").unwrap();
    }
    writeln!(s, "boundary {}", bnd.len()).unwrap();
    for b in bnd {
        writeln!(s, "{b}").unwrap();
    }
    writeln!(s, "history {}", mesh.history.len()).unwrap();
    for k in &mesh.history {
        writeln!(s, "{k}").unwrap();
    }
    writeln!(s, "vertices {}", mesh.vertices.len()).unwrap();
    for (i, v) in mesh.vertices.iter().enumerate() {
        writeln!(s, "{i} {:.17e} {:.17e}", v.x[0], v.x[1]).unwrap();
    }
    writeln!(s, "elements {}", mesh.num_active()).unwrap();
    for &k in mesh.active() {
        let el = &mesh.elements[k];
        writeln!(s, "{k} {} {} {} {} level {}", el.verts[0], el.verts[1], el.verts[2], el.verts[3], el.level).unwrap();
    }
    let active_edges = mesh.active_edges();
    writeln!(s, "edges {}", active_edges.len()).unwrap();
    for e in active_edges {
        let ed = &mesh.edges[e];
        let hang = match ed.parent {
            Some((p, c)) if mesh.edge_is_constrained(e) => format!(" hanging {p} {c}"),
            _ => String::new(),
        };
        writeln!(s, "{e} {} {} {}{hang}", ed.v[0], ed.v[1], ed.tag.name()).unwrap();
    }
    s
}

/// Parses a mesh written by [`Mesh::dump`].
pub fn load_mesh(text: &str) -> Result<Mesh, Error> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut next = |what: &str| -> Result<(usize, Vec<String>), Error> {
        let (i, l) = lines.next().ok_or(Error::MeshFormat { line: 0, msg: format!("unexpected end, expected {what}") })?;
        Ok((i + 1, l.split_whitespace().map(str::to_string).collect()))
    };
    let fail = |line: usize, msg: String| Error::MeshFormat { line, msg };
    let (l, head) = next("header")?;
    if head.first().map(String::as_str) != Some("viscodpg-mesh") {
        return Err(fail(l, "missing header".into()));
    }
    let section = |toks: &[String], line: usize, name: &str| -> Result<usize, Error> {
        if toks.len() != 2 || toks[0] != name {
            return Err(fail(line, format!("expected section `{name} <count>`")));
        }
        toks[1].parse().map_err(|_| fail(line, "bad count".into()))
    };
    let num = |t: &str, line: usize| -> Result<f64, Error> { t.parse().map_err(|_| fail(line, format!("bad number `{t}`"))) };
    let int = |t: &str, line: usize| -> Result<usize, Error> { t.parse().map_err(|_| fail(line, format!("bad integer `{t}`"))) };

    let (l, t) = next("points")?;
    let n = section(&t, l, "points")?;
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        let (l, t) = next("point")?;
        if t.len() != 2 {
            return Err(fail(l, "point needs 2 coordinates".into()));
        }
        pts.push([num(&t[0], l)?, num(&t[1], l)?]);
    }
    let (l, t) = next("quads")?;
    let m = section(&t, l, "quads")?;
    let mut quads = Vec::with_capacity(m);
    for _ in 0..m {
        let (l, t) = next("quad")?;
        if t.len() != 4 {
            return Err(fail(l, "quad needs 4 vertex ids".into()));
        }
        let q = [int(&t[0], l)?, int(&t[1], l)?, int(&t[2], l)?, int(&t[3], l)?];
        if q.iter().any(|&v| v >= n) {
            return Err(fail(l, "vertex id out of range".into()));
        }
        quads.push(q);
    }
    let (l, t) = next("arcs")?;
    let k = section(&t, l, "arcs")?;
    let mut arcs = Vec::with_capacity(k);
    for _ in 0..k {
        let (l, t) = next("arc")?;
        if t.len() != 5 {
            return Err(fail(l, "arc needs `a b cx cy r`".into()));
        }
        arcs.push((int(&t[0], l)?, int(&t[1], l)?, Curve::Arc { center: [num(&t[2], l)?, num(&t[3], l)?], radius: num(&t[4], l)? }));
    }
    let (l, t) = next("boundary")?;
    let b = section(&t, l, "boundary")?;
    let mut tags: HashMap<(usize, usize), EdgeTag> = HashMap::new();
    for _ in 0..b {
        let (l, t) = next("boundary edge")?;
        if t.len() != 3 {
            return Err(fail(l, "boundary edge needs `a b tag`".into()));
        }
        let (a, bb) = (int(&t[0], l)?, int(&t[1], l)?);
        let tag = EdgeTag::from_name(&t[2]).ok_or_else(|| fail(l, format!("unknown tag `{}`", t[2])))?;
        tags.insert((a.min(bb), a.max(bb)), tag);
    }
    let (l, t) = next("history")?;
    let h = section(&t, l, "history")?;
    let mut history = Vec::with_capacity(h);
    for _ in 0..h {
        let (l, t) = next("history entry")?;
        history.push((l, int(&t[0], l)?));
    }
    let lookup: HashMap<[u64; 2], usize> = pts.iter().enumerate().map(|(i, p)| ([p[0].to_bits(), p[1].to_bits()], i)).collect();
    let tagger = move |a: [f64; 2], b: [f64; 2]| {
        let ia = lookup[&[a[0].to_bits(), a[1].to_bits()]];
        let ib = lookup[&[b[0].to_bits(), b[1].to_bits()]];
        tags.get(&(ia.min(ib), ia.max(ib))).copied().unwrap_or(EdgeTag::Wall)
    };
    let mut mesh = Mesh::from_roots(pts, quads, &arcs, tagger);
    for (l, k) in history {
        if k >= mesh.elements.len() || !mesh.is_leaf(k) {
            return Err(fail(l, format!("history entry {k} is not an active element")));
        }
        mesh.split(k);
    }
    mesh.active = (0..mesh.elements.len()).filter(|&k| mesh.is_leaf(k)).collect();
    // optional informational sections: check the active element count
    while let Ok((l, t)) = next("section") {
        if t.len() == 2 && t[0] == "elements" {
            let count = int(&t[1], l)?;
            if count != mesh.num_active() {
                return Err(fail(l, format!("expected {} active elements, file lists {count}", mesh.num_active())));
            }
        }
    }
    Ok(mesh)
}

/// Writes the active mesh as a legacy VTK unstructured grid, with optional
/// per-element scalar fields.
pub fn write_vtk(mesh: &Mesh, path: &Path, cell_data: &[(&str, &[f64])]) -> Result<(), Error> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# vtk DataFile Version 3.0")?;
    writeln!(f, "viscodpg mesh")?;
    writeln!(f, "ASCII")?;
    writeln!(f, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(f, "POINTS {} double", mesh.vertices.len())?;
    for v in &mesh.vertices {
        writeln!(f, "{} {} 0", v.x[0], v.x[1])?;
    }
    let n = mesh.num_active();
    writeln!(f, "CELLS {n} {}", 5 * n)?;
    for &k in mesh.active() {
        let v = mesh.elements[k].verts;
        writeln!(f, "4 {} {} {} {}", v[0], v[1], v[2], v[3])?;
    }
    writeln!(f, "CELL_TYPES {n}")?;
    for _ in 0..n {
        writeln!(f, "9")?;
    }
    if !cell_data.is_empty() {
        writeln!(f, "CELL_DATA {n}")?;
        for (name, data) in cell_data {
            if data.len() != n {
                return Err(Error::Layout(format!("cell field {name} has {} values for {n} cells", data.len())));
            }
            writeln!(f, "SCALARS {name} double 1")?;
            writeln!(f, "LOOKUP_TABLE default")?;
            for v in data.iter() {
                writeln!(f, "{v}")?;
            }
        }
    }
    f.flush()?;
    Ok(())
}
