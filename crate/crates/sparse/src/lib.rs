//! Block-supernodal sparse Cholesky.
//!
//! The matrix is described by a graph of *nodes*, each node owning a
//! contiguous range of scalar unknowns. All entries coupling two nodes are
//! stored as dense blocks, so the factorization is a right-looking
//! supernodal scheme whose inner work is dense `gemm`.
//!
//! Typical use:
//!
//! 1. build a [`BlockGraph`] with node sizes and couplings,
//! 2. compute a [`Symbolic`] analysis with an [`OrderingSpec`],
//! 3. assemble into a [`BlockMatrix`] with [`BlockMatrix::add_block`],
//! 4. call [`BlockMatrix::factor`] and then [`Factor::solve`].

pub mod dense;
mod ordering;

use std::sync::Arc;

pub use dense::DenseCholesky;
pub use ordering::OrderingSpec;

use dense::{gemm_raw, Op};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorError {
    #[error("non-positive pivot {value:e} at scalar index {index} (node {node})")]
    NotPositiveDefinite { index: usize, node: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Node sizes and symmetric node couplings.
#[derive(Clone, Debug, Default)]
pub struct BlockGraph {
    sizes: Vec<usize>,
    adj: Vec<Vec<usize>>,
}

impl BlockGraph {
    pub fn new(sizes: Vec<usize>) -> Self {
        let n = sizes.len();
        Self { sizes, adj: vec![Vec::new(); n] }
    }

    pub fn num_nodes(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Records a coupling between nodes `a` and `b` (self loops are ignored).
    pub fn add_edge(&mut self, a: usize, b: usize) {
        if a != b {
            self.adj[a].push(b);
            self.adj[b].push(a);
        }
    }

    /// Records all pairwise couplings within `nodes`.
    pub fn add_clique(&mut self, nodes: &[usize]) {
        for (i, &a) in nodes.iter().enumerate() {
            for &b in &nodes[i + 1..] {
                self.add_edge(a, b);
            }
        }
    }

    fn normalize(&mut self) {
        for list in &mut self.adj {
            list.sort_unstable();
            list.dedup();
        }
    }

    pub(crate) fn neighbors(&self, a: usize) -> &[usize] {
        &self.adj[a]
    }
}

/// Symbolic analysis: elimination order and the block structure of `L`.
#[derive(Debug)]
pub struct Symbolic {
    sizes: Vec<usize>,
    /// Scalar offset of every node in the caller's numbering.
    offsets: Vec<usize>,
    /// `order[k]` is the node eliminated at step `k`.
    order: Vec<usize>,
    /// Inverse of `order`.
    pos: Vec<usize>,
    /// Off-diagonal block rows of column `k`, as sorted positions.
    rows: Vec<Vec<usize>>,
    /// Scalar row offset within panel `k` for each entry of `rows[k]`.
    row_off: Vec<Vec<usize>>,
    /// Panel heights (diagonal block plus off-diagonal rows).
    ld: Vec<usize>,
    /// Original (pre-fill) off-diagonal couplings per position, as indices into `rows`.
    orig: Vec<Vec<usize>>,
    n: usize,
}

impl Symbolic {
    /// Analyses `graph` using the elimination order produced by `spec`.
    pub fn analyse(mut graph: BlockGraph, spec: &OrderingSpec) -> Result<Self, FactorError> {
        graph.normalize();
        let nn = graph.num_nodes();
        let order = spec.order(&graph)?;
        let mut pos = vec![usize::MAX; nn];
        for (k, &node) in order.iter().enumerate() {
            if pos[node] != usize::MAX {
                return Err(FactorError::Dimension(format!("node {node} ordered twice")));
            }
            pos[node] = k;
        }
        let mut offsets = Vec::with_capacity(nn);
        let mut acc = 0;
        for &s in &graph.sizes {
            offsets.push(acc);
            acc += s;
        }

        let mut rows: Vec<Vec<usize>> = Vec::with_capacity(nn);
        let mut orig: Vec<Vec<usize>> = Vec::with_capacity(nn);
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); nn];
        let mut mark = vec![usize::MAX; nn];
        for k in 0..nn {
            let node = order[k];
            let mut set = Vec::new();
            mark[k] = k;
            for &nb in graph.neighbors(node) {
                let p = pos[nb];
                if p > k && mark[p] != k {
                    mark[p] = k;
                    set.push(p);
                }
            }
            let n_orig = set.len();
            for &c in &children[k] {
                for &p in &rows[c] {
                    if p > k && mark[p] != k {
                        mark[p] = k;
                        set.push(p);
                    }
                }
            }
            let mut orig_set: Vec<usize> = set[..n_orig].to_vec();
            set.sort_unstable();
            orig_set.sort_unstable();
            let orig_idx = orig_set.iter().map(|p| set.binary_search(p).expect("original row present")).collect();
            if let Some(&parent) = set.first() {
                children[parent].push(k);
            }
            rows.push(set);
            orig.push(orig_idx);
        }
        let mut row_off = Vec::with_capacity(nn);
        let mut ld = Vec::with_capacity(nn);
        for k in 0..nn {
            let mut off = graph.sizes[order[k]];
            let mut list = Vec::with_capacity(rows[k].len());
            for &p in &rows[k] {
                list.push(off);
                off += graph.sizes[order[p]];
            }
            row_off.push(list);
            ld.push(off);
        }
        Ok(Self { sizes: graph.sizes, offsets, order, pos, rows, row_off, ld, orig, n: acc })
    }

    /// Number of scalar unknowns.
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn num_nodes(&self) -> usize {
        self.sizes.len()
    }

    /// Scalar offset of `node` in the caller's numbering.
    pub fn offset(&self, node: usize) -> usize {
        self.offsets[node]
    }

    pub fn size(&self, node: usize) -> usize {
        self.sizes[node]
    }

    /// Number of stored entries in the factor (panels, including the full
    /// diagonal blocks).
    pub fn factor_entries(&self) -> usize {
        (0..self.num_nodes()).map(|k| self.ld[k] * self.sizes[self.order[k]]).sum()
    }

    /// Elimination order (node eliminated at each step).
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    fn locate(&self, row_pos: usize, col_pos: usize) -> Option<usize> {
        if row_pos == col_pos {
            return Some(0);
        }
        self.rows[col_pos].binary_search(&row_pos).ok().map(|i| self.row_off[col_pos][i])
    }
}

/// An assembled symmetric matrix in block-panel storage, ready to factor.
#[derive(Clone, Debug)]
pub struct BlockMatrix {
    sym: Arc<Symbolic>,
    panels: Vec<Vec<f64>>,
}

impl BlockMatrix {
    pub fn zeros(sym: Arc<Symbolic>) -> Self {
        let panels = (0..sym.num_nodes()).map(|k| vec![0.0; sym.ld[k] * sym.sizes[sym.order[k]]]).collect();
        Self { sym, panels }
    }

    pub fn symbolic(&self) -> &Arc<Symbolic> {
        &self.sym
    }

    /// Adds the dense block `blk` (column-major, `size(row) x size(col)`)
    /// to the entries coupling `row` and `col`. Both the `(row, col)` and the
    /// mirrored `(col, row)` position are implied, so each coupling should be
    /// added from one side only (or the diagonal block fully).
    pub fn add_block(&mut self, row: usize, col: usize, blk: &[f64]) {
        let sym = &self.sym;
        let nr = sym.sizes[row];
        let nc = sym.sizes[col];
        debug_assert_eq!(blk.len(), nr * nc);
        let (pr, pc) = (sym.pos[row], sym.pos[col]);
        if pr >= pc {
            let off = sym.locate(pr, pc).unwrap_or_else(|| panic!("block ({row},{col}) not in the structure"));
            let ld = sym.ld[pc];
            let panel = &mut self.panels[pc];
            for c in 0..nc {
                let dst = &mut panel[off + c * ld..off + c * ld + nr];
                for (d, s) in dst.iter_mut().zip(&blk[c * nr..(c + 1) * nr]) {
                    *d += s;
                }
            }
        } else {
            let off = sym.locate(pc, pr).unwrap_or_else(|| panic!("block ({row},{col}) not in the structure"));
            let ld = sym.ld[pr];
            let panel = &mut self.panels[pr];
            for r in 0..nr {
                for c in 0..nc {
                    panel[off + c + r * ld] += blk[r + c * nr];
                }
            }
        }
    }

    /// Adds `value` to a single scalar entry given in global scalar indices.
    pub fn add_entry(&mut self, i: usize, j: usize, value: f64) {
        let (ni, li) = self.node_of(i);
        let (nj, lj) = self.node_of(j);
        let mut blk = vec![0.0; self.sym.sizes[ni] * self.sym.sizes[nj]];
        blk[li + lj * self.sym.sizes[ni]] = value;
        if ni == nj && li != lj {
            // keep the diagonal block symmetric
            blk[lj + li * self.sym.sizes[ni]] = value;
        }
        self.add_block(ni, nj, &blk);
    }

    fn node_of(&self, i: usize) -> (usize, usize) {
        let node = match self.sym.offsets.binary_search(&i) {
            Ok(mut k) => {
                // skip empty nodes sharing the offset
                while self.sym.sizes[k] == 0 {
                    k += 1;
                }
                k
            }
            Err(k) => k - 1,
        };
        (node, i - self.sym.offsets[node])
    }

    /// Extracts the stored matrix as a sparse multiply-only operator.
    pub fn to_operator(&self) -> SymOperator {
        let sym = &self.sym;
        let mut blocks = Vec::new();
        for k in 0..sym.num_nodes() {
            let col = sym.order[k];
            let nc = sym.sizes[col];
            let ld = sym.ld[k];
            let panel = &self.panels[k];
            let mut diag = vec![0.0; nc * nc];
            for c in 0..nc {
                for r in 0..nc {
                    // lower triangle is authoritative
                    let (rr, cc) = if r >= c { (r, c) } else { (c, r) };
                    diag[r + c * nc] = panel[rr + cc * ld];
                }
            }
            blocks.push((col, col, diag));
            for &idx in &sym.orig[k] {
                let rp = sym.rows[k][idx];
                let row = sym.order[rp];
                let nr = sym.sizes[row];
                let off = sym.row_off[k][idx];
                let mut b = vec![0.0; nr * nc];
                for c in 0..nc {
                    b[c * nr..(c + 1) * nr].copy_from_slice(&panel[off + c * ld..off + c * ld + nr]);
                }
                blocks.push((row, col, b));
            }
        }
        SymOperator { sizes: sym.sizes.clone(), offsets: sym.offsets.clone(), n: sym.n, blocks }
    }

    /// Dense copy of the full symmetric matrix (for small problems and tests).
    pub fn to_dense(&self) -> Vec<f64> {
        let op = self.to_operator();
        let n = op.n;
        let mut a = vec![0.0; n * n];
        for (row, col, b) in &op.blocks {
            let (nr, nc) = (op.sizes[*row], op.sizes[*col]);
            let (ro, co) = (op.offsets[*row], op.offsets[*col]);
            for c in 0..nc {
                for r in 0..nr {
                    a[(ro + r) + (co + c) * n] = b[r + c * nr];
                    a[(co + c) + (ro + r) * n] = b[r + c * nr];
                }
            }
        }
        a
    }

    /// Computes the Cholesky factorization, consuming the assembled matrix.
    pub fn factor(mut self) -> Result<Factor, FactorError> {
        let sym = Arc::clone(&self.sym);
        let nn = sym.num_nodes();
        let mut tmp: Vec<f64> = Vec::new();
        for k in 0..nn {
            let node = sym.order[k];
            let s = sym.sizes[node];
            let ld = sym.ld[k];
            if s == 0 {
                continue;
            }
            let (head, tail) = self.panels.split_at_mut(k + 1);
            let panel = &mut head[k];
            dense::potrf(s, panel, ld).map_err(|(i, value)| FactorError::NotPositiveDefinite {
                index: sym.offsets[node] + i,
                node,
                value,
            })?;
            let m = ld - s;
            if m == 0 {
                continue;
            }
            // SAFETY: the diagonal block (rows 0..s) and the off-diagonal rows
            // (s..ld) of the same column-major panel are disjoint.
            unsafe {
                let p = panel.as_mut_ptr();
                dense::trsm_right_lower_t_raw(m, s, p, ld, p.add(s), ld);
            }
            let rows = &sym.rows[k];
            let offs = &sym.row_off[k];
            for (idx, &j) in rows.iter().enumerate() {
                let sj = sym.sizes[sym.order[j]];
                let r0 = offs[idx];
                let nrest = ld - r0;
                if sj == 0 {
                    continue;
                }
                tmp.clear();
                tmp.resize(nrest * sj, 0.0);
                // tmp = L[r0.., :] * L[r0..r0+sj, :]^T
                // SAFETY: reads from `panel`, writes into the separate `tmp`.
                unsafe {
                    gemm_raw(
                        nrest,
                        s,
                        sj,
                        1.0,
                        panel.as_ptr().add(r0),
                        (1, ld as isize),
                        panel.as_ptr().add(r0),
                        (ld as isize, 1),
                        0.0,
                        tmp.as_mut_ptr(),
                        (1, nrest as isize),
                    );
                }
                let target = &mut tail[j - k - 1];
                let tld = sym.ld[j];
                let trows = &sym.rows[j];
                let toffs = &sym.row_off[j];
                let mut cursor = 0usize;
                for idx2 in idx..rows.len() {
                    let ip = rows[idx2];
                    let ni = sym.sizes[sym.order[ip]];
                    let src_r = offs[idx2] - r0;
                    let dst_r = if ip == j {
                        0
                    } else {
                        while trows[cursor] < ip {
                            cursor += 1;
                        }
                        debug_assert_eq!(trows[cursor], ip);
                        toffs[cursor]
                    };
                    for c in 0..sj {
                        let dst = &mut target[dst_r + c * tld..dst_r + c * tld + ni];
                        let src = &tmp[src_r + c * nrest..src_r + c * nrest + ni];
                        for (d, v) in dst.iter_mut().zip(src) {
                            *d -= v;
                        }
                    }
                }
            }
        }
        Ok(Factor { sym, panels: self.panels })
    }
}

/// Multiply-only copy of an assembled block matrix.
#[derive(Clone, Debug)]
pub struct SymOperator {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    n: usize,
    /// `(row, col, block)` with the block column-major; off-diagonal blocks
    /// stand for both themselves and their transpose.
    blocks: Vec<(usize, usize, Vec<f64>)>,
}

impl SymOperator {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (row, col, b) in &self.blocks {
            let (nr, nc) = (self.sizes[*row], self.sizes[*col]);
            let (ro, co) = (self.offsets[*row], self.offsets[*col]);
            for c in 0..nc {
                let xc = x[co + c];
                let bc = &b[c * nr..(c + 1) * nr];
                let mut acc = 0.0;
                for r in 0..nr {
                    y[ro + r] += bc[r] * xc;
                    acc += bc[r] * x[ro + r];
                }
                if row != col {
                    y[co + c] += acc;
                }
            }
        }
        y
    }

    /// Entries of the lower triangle as `(row, col, value)` triplets in
    /// scalar indices, skipping exact zeros.
    pub fn lower_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (row, col, b) in &self.blocks {
            let (nr, nc) = (self.sizes[*row], self.sizes[*col]);
            let (ro, co) = (self.offsets[*row], self.offsets[*col]);
            for c in 0..nc {
                for r in 0..nr {
                    let (i, j) = (ro + r, co + c);
                    let v = b[r + c * nr];
                    if i >= j && v != 0.0 {
                        out.push((i, j, v));
                    } else if i < j && row != col && v != 0.0 {
                        out.push((j, i, v));
                    }
                }
            }
        }
        out.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        out
    }

    /// Mean of the diagonal entries.
    pub fn mean_diagonal(&self) -> f64 {
        let mut s = 0.0;
        for (row, col, b) in &self.blocks {
            if row == col {
                let n = self.sizes[*row];
                for i in 0..n {
                    s += b[i + i * n];
                }
            }
        }
        if self.n == 0 {
            0.0
        } else {
            s / self.n as f64
        }
    }
}

/// A computed block Cholesky factor.
#[derive(Debug)]
pub struct Factor {
    sym: Arc<Symbolic>,
    panels: Vec<Vec<f64>>,
}

impl Factor {
    pub fn dim(&self) -> usize {
        self.sym.n
    }

    /// Solves `A X = B` in place, `b` holding `nrhs` columns of length `dim`.
    pub fn solve(&self, b: &mut [f64], nrhs: usize) {
        let sym = &*self.sym;
        let n = sym.n;
        assert_eq!(b.len(), n * nrhs, "solve: right-hand side has wrong length");
        let nn = sym.num_nodes();
        // permute into elimination order
        let mut pstart = Vec::with_capacity(nn);
        let mut acc = 0;
        for k in 0..nn {
            pstart.push(acc);
            acc += sym.sizes[sym.order[k]];
        }
        let mut y = vec![0.0; n * nrhs];
        for k in 0..nn {
            let node = sym.order[k];
            let (s, o) = (sym.sizes[node], sym.offsets[node]);
            for r in 0..nrhs {
                y[pstart[k] + r * n..pstart[k] + s + r * n].copy_from_slice(&b[o + r * n..o + s + r * n]);
            }
        }
        let mut xk = Vec::new();
        let mut t = Vec::new();
        // forward
        for k in 0..nn {
            let s = sym.sizes[sym.order[k]];
            if s == 0 {
                continue;
            }
            let ld = sym.ld[k];
            let panel = &self.panels[k];
            gather(&y, n, pstart[k], s, nrhs, &mut xk);
            dense::trsm_left_lower(s, nrhs, panel, ld, &mut xk, s);
            scatter_set(&mut y, n, pstart[k], s, nrhs, &xk);
            let m = ld - s;
            if m == 0 {
                continue;
            }
            t.clear();
            t.resize(m * nrhs, 0.0);
            dense::gemm(Op::N, Op::N, m, nrhs, s, 1.0, &panel[s..], ld, &xk, s, 0.0, &mut t, m);
            for (idx, &ip) in sym.rows[k].iter().enumerate() {
                let ni = sym.sizes[sym.order[ip]];
                let src = sym.row_off[k][idx] - s;
                for r in 0..nrhs {
                    for i in 0..ni {
                        y[pstart[ip] + i + r * n] -= t[src + i + r * m];
                    }
                }
            }
        }
        // backward
        for k in (0..nn).rev() {
            let s = sym.sizes[sym.order[k]];
            if s == 0 {
                continue;
            }
            let ld = sym.ld[k];
            let panel = &self.panels[k];
            gather(&y, n, pstart[k], s, nrhs, &mut xk);
            let m = ld - s;
            if m > 0 {
                t.clear();
                t.resize(m * nrhs, 0.0);
                for (idx, &ip) in sym.rows[k].iter().enumerate() {
                    let ni = sym.sizes[sym.order[ip]];
                    let dst = sym.row_off[k][idx] - s;
                    for r in 0..nrhs {
                        for i in 0..ni {
                            t[dst + i + r * m] = y[pstart[ip] + i + r * n];
                        }
                    }
                }
                dense::gemm(Op::T, Op::N, s, nrhs, m, -1.0, &panel[s..], ld, &t, m, 1.0, &mut xk, s);
            }
            dense::trsm_left_lower_t(s, nrhs, panel, ld, &mut xk, s);
            scatter_set(&mut y, n, pstart[k], s, nrhs, &xk);
        }
        for k in 0..nn {
            let node = sym.order[k];
            let (s, o) = (sym.sizes[node], sym.offsets[node]);
            for r in 0..nrhs {
                b[o + r * n..o + s + r * n].copy_from_slice(&y[pstart[k] + r * n..pstart[k] + s + r * n]);
            }
        }
    }
}

fn gather(y: &[f64], n: usize, start: usize, s: usize, nrhs: usize, out: &mut Vec<f64>) {
    out.clear();
    for r in 0..nrhs {
        out.extend_from_slice(&y[start + r * n..start + s + r * n]);
    }
}

fn scatter_set(y: &mut [f64], n: usize, start: usize, s: usize, nrhs: usize, src: &[f64]) {
    for r in 0..nrhs {
        y[start + r * n..start + s + r * n].copy_from_slice(&src[r * s..(r + 1) * s]);
    }
}
