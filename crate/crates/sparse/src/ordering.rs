//! Elimination orderings over the node graph.

use crate::{BlockGraph, FactorError};

/// How to order the nodes before factorization.
///
/// Nodes flagged in `first` are eliminated before everything else in their
/// natural order; this suits element-interior unknowns whose elimination only
/// produces fill that is already present. The remaining nodes are ordered by
/// geometric nested dissection when coordinates are supplied, otherwise in
/// natural order.
#[derive(Clone, Debug, Default)]
pub struct OrderingSpec {
    pub first: Option<Vec<bool>>,
    pub coords: Option<Vec<[f64; 2]>>,
    /// Subdomains at or below this many nodes are not dissected further.
    pub leaf_size: usize,
}

impl OrderingSpec {
    pub fn natural() -> Self {
        Self { first: None, coords: None, leaf_size: 16 }
    }

    pub fn nested_dissection(coords: Vec<[f64; 2]>, first: Option<Vec<bool>>) -> Self {
        Self { first, coords: Some(coords), leaf_size: 16 }
    }

    pub(crate) fn order(&self, graph: &BlockGraph) -> Result<Vec<usize>, FactorError> {
        let n = graph.num_nodes();
        let first = match &self.first {
            Some(f) if f.len() != n => return Err(FactorError::Dimension(format!("ordering flags have length {} for {n} nodes", f.len()))),
            Some(f) => f.clone(),
            None => vec![false; n],
        };
        let mut order: Vec<usize> = (0..n).filter(|&i| first[i]).collect();
        let rest: Vec<usize> = (0..n).filter(|&i| !first[i]).collect();
        match &self.coords {
            None => order.extend(rest),
            Some(coords) => {
                if coords.len() != n {
                    return Err(FactorError::Dimension(format!("ordering coordinates have length {} for {n} nodes", coords.len())));
                }
                let mut nd = Dissection { graph, coords, label: vec![0u32; n], next_label: 1, leaf: self.leaf_size.max(2) };
                // Label 0 marks nodes outside the dissected set.
                let root = nd.fresh();
                for &i in &rest {
                    nd.label[i] = root;
                }
                nd.dissect(rest, root, &mut order);
            }
        }
        Ok(order)
    }
}

struct Dissection<'a> {
    graph: &'a BlockGraph,
    coords: &'a [[f64; 2]],
    label: Vec<u32>,
    next_label: u32,
    leaf: usize,
}

impl Dissection<'_> {
    fn fresh(&mut self) -> u32 {
        let l = self.next_label;
        self.next_label += 1;
        l
    }

    /// Appends an ordering of `nodes` (all carrying label `own`) to `out`.
    fn dissect(&mut self, mut nodes: Vec<usize>, own: u32, out: &mut Vec<usize>) {
        if nodes.len() <= self.leaf {
            out.extend(nodes);
            return;
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for &i in &nodes {
            for d in 0..2 {
                lo[d] = lo[d].min(self.coords[i][d]);
                hi[d] = hi[d].max(self.coords[i][d]);
            }
        }
        let axis = if hi[0] - lo[0] >= hi[1] - lo[1] { 0 } else { 1 };
        nodes.sort_by(|&a, &b| self.coords[a][axis].total_cmp(&self.coords[b][axis]));
        let half = nodes.len() / 2;
        let (la, lb) = (self.fresh(), self.fresh());
        for (k, &i) in nodes.iter().enumerate() {
            self.label[i] = if k < half { la } else { lb };
        }
        // candidate separators: boundary of either half
        let touches = |this: &Self, i: usize, other: u32| this.graph.neighbors(i).iter().any(|&j| this.label[j] == other);
        let sep_a: Vec<usize> = nodes[..half].iter().copied().filter(|&i| touches(self, i, lb)).collect();
        let sep_b: Vec<usize> = nodes[half..].iter().copied().filter(|&i| touches(self, i, la)).collect();
        let sep = if sep_a.len() <= sep_b.len() { sep_a } else { sep_b };
        if sep.len() * 2 >= nodes.len() {
            for &i in &nodes {
                self.label[i] = own;
            }
            out.extend(nodes);
            return;
        }
        let sl = self.fresh();
        for &i in &sep {
            self.label[i] = sl;
        }
        let part_a: Vec<usize> = nodes[..half].iter().copied().filter(|&i| self.label[i] == la).collect();
        let part_b: Vec<usize> = nodes[half..].iter().copied().filter(|&i| self.label[i] == lb).collect();
        self.dissect(part_a, la, out);
        self.dissect(part_b, lb, out);
        out.extend(sep);
    }
}
