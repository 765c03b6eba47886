//! Reference-element polynomial spaces and Gauss quadrature.
//!
//! Field and test variables use tensor products of the integrated-Legendre
//! (hierarchical) family on `[-1,1]^2`. Edge traces use the same 1D family,
//! so the first two functions are the vertex hats and the remaining ones are
//! bubbles vanishing at both ends. Edge fluxes use orthonormal Legendre
//! polynomials.

use blocksparse::DenseCholesky;
use nalgebra::DMatrix;

/// Polynomial orders of the discretization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PolyOrders {
    /// Trial field order.
    pub p: usize,
    /// Test enrichment.
    pub dp: usize,
}

impl Default for PolyOrders {
    fn default() -> Self {
        Self { p: 2, dp: 2 }
    }
}

impl PolyOrders {
    pub fn new(p: usize, dp: usize) -> Self {
        Self { p, dp }
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut errs = Vec::new();
        if self.p < 1 {
            errs.push(format!("p must be >= 1 (got {})", self.p));
        }
        if self.dp < 1 {
            errs.push(format!("dp must be >= 1 (got {})", self.dp));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs.join("; "))
        }
    }

    pub fn trace_order(&self) -> usize {
        self.p + 1
    }

    pub fn flux_order(&self) -> usize {
        self.p
    }

    pub fn test_order(&self) -> usize {
        self.p + self.dp
    }

    /// Scalar field basis dimension `(p+1)^2`.
    pub fn field_dim(&self) -> usize {
        (self.p + 1) * (self.p + 1)
    }

    /// Scalar test basis dimension `(p+dp+1)^2`.
    pub fn test_dim(&self) -> usize {
        (self.test_order() + 1) * (self.test_order() + 1)
    }

    /// Quadrature points per direction on straight elements.
    pub fn quad_points(&self) -> usize {
        self.p + self.dp + 2
    }
}

/// A 1D Gauss-Legendre rule on `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadrature {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    /// Tensor-product rule on `[-1,1]^2`: returns `(points, weights)` with
    /// the first coordinate running fastest.
    pub fn tensor(&self) -> (Vec<[f64; 2]>, Vec<f64>) {
        let n = self.points.len();
        let mut pts = Vec::with_capacity(n * n);
        let mut wts = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                pts.push([self.points[i], self.points[j]]);
                wts.push(self.weights[i] * self.weights[j]);
            }
        }
        (pts, wts)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// The `n`-point Gauss-Legendre rule.
pub fn gauss_rule(n: usize) -> Quadrature {
    assert!(n >= 1, "gauss_rule needs at least one point");
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-type initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_pair(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_pair(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        points[i] = -x;
        points[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        points[n / 2] = 0.0;
    }
    Quadrature { points, weights }
}

/// `(P_n(x), P_n'(x))`.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    // derivative from the standard identity, valid away from +-1
    let d = if (1.0 - x * x).abs() > 1e-300 {
        n as f64 * (p0 - x * p1) / (1.0 - x * x)
    } else {
        let s = if x > 0.0 || n % 2 == 0 { 1.0 } else { -1.0 };
        s * (n * (n + 1)) as f64 / 2.0
    };
    (p1, d)
}

/// Values and derivatives of `P_0..=P_k` at `x`.
pub fn legendre_all(k: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; k + 1];
    let mut d = vec![0.0; k + 1];
    v[0] = 1.0;
    if k >= 1 {
        v[1] = x;
        d[1] = 1.0;
    }
    for n in 2..=k {
        let nf = n as f64;
        v[n] = ((2.0 * nf - 1.0) * x * v[n - 1] - (nf - 1.0) * v[n - 2]) / nf;
        d[n] = d[n - 2] + (2.0 * nf - 1.0) * v[n - 1];
    }
    (v, d)
}

/// Integrated-Legendre family of order `k` at `x`: `psi_0 = (1-x)/2`,
/// `psi_1 = (1+x)/2`, and for `n >= 2` the normalized bubbles
/// `(P_n - P_{n-2}) / sqrt(2(2n-1))`.
pub fn integrated_legendre_all(k: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; k + 1];
    let mut d = vec![0.0; k + 1];
    v[0] = 0.5 * (1.0 - x);
    d[0] = -0.5;
    if k == 0 {
        // constant space: use the single function 1
        return (vec![1.0], vec![0.0]);
    }
    v[1] = 0.5 * (1.0 + x);
    d[1] = 0.5;
    if k >= 2 {
        let (p, _) = legendre_all(k, x);
        for n in 2..=k {
            let c = (2.0 * (2.0 * n as f64 - 1.0)).sqrt();
            v[n] = (p[n] - p[n - 2]) / c;
            d[n] = p[n - 1] * ((2.0 * n as f64 - 1.0) / 2.0).sqrt();
        }
    }
    (v, d)
}

/// Orthonormal Legendre family `sqrt((2n+1)/2) P_n`, `n = 0..=k`.
pub fn normalized_legendre_all(k: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let (mut v, mut d) = legendre_all(k, x);
    for n in 0..=k {
        let c = ((2 * n + 1) as f64 / 2.0).sqrt();
        v[n] *= c;
        d[n] *= c;
    }
    (v, d)
}

/// Which variable a basis serves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisKind {
    FieldScalar,
    FieldVector,
    FieldTensor,
    FieldSymTensor,
    EdgeTrace,
    EdgeFlux,
    TestScalar,
    TestVector,
    TestTensor,
    TestSymTensor,
}

impl BasisKind {
    /// Number of scalar components.
    pub fn components(self) -> usize {
        match self {
            BasisKind::FieldScalar | BasisKind::TestScalar | BasisKind::EdgeTrace | BasisKind::EdgeFlux => 1,
            BasisKind::FieldVector | BasisKind::TestVector => 2,
            BasisKind::FieldTensor | BasisKind::TestTensor => 4,
            BasisKind::FieldSymTensor | BasisKind::TestSymTensor => 3,
        }
    }

    fn is_edge(self) -> bool {
        matches!(self, BasisKind::EdgeTrace | BasisKind::EdgeFlux)
    }
}

/// A scalar polynomial family with its kind and order. Vector and tensor
/// kinds use the same scalar family for every component.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Basis {
    pub kind: BasisKind,
    pub order: usize,
}

impl Basis {
    /// Dimension of one scalar component.
    pub fn scalar_dim(&self) -> usize {
        if self.kind.is_edge() {
            self.order + 1
        } else {
            (self.order + 1) * (self.order + 1)
        }
    }

    /// Total dimension over all components.
    pub fn dim(&self) -> usize {
        self.scalar_dim() * self.kind.components()
    }

    /// 1D evaluation on an edge (edge kinds only).
    pub fn eval_1d(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        match self.kind {
            BasisKind::EdgeTrace => integrated_legendre_all(self.order, t),
            BasisKind::EdgeFlux => normalized_legendre_all(self.order, t),
            _ => panic!("eval_1d called on a 2D basis"),
        }
    }

    /// 2D scalar evaluation: values and reference gradients of every scalar
    /// function, index `a + (order+1) b` for `psi_a(xi) psi_b(eta)`.
    pub fn eval_2d(&self, xi: f64, eta: f64) -> (Vec<f64>, Vec<[f64; 2]>) {
        assert!(!self.kind.is_edge(), "eval_2d called on an edge basis");
        let k = self.order;
        let (vx, dx) = integrated_legendre_all(k, xi);
        let (vy, dy) = integrated_legendre_all(k, eta);
        let n = k + 1;
        let mut val = Vec::with_capacity(n * n);
        let mut grad = Vec::with_capacity(n * n);
        for b in 0..n {
            for a in 0..n {
                val.push(vx[a] * vy[b]);
                grad.push([dx[a] * vy[b], vx[a] * dy[b]]);
            }
        }
        (val, grad)
    }

    /// Evaluation tables at a list of reference points.
    pub fn tabulate(&self, points: &[[f64; 2]]) -> BasisTable {
        let n = self.scalar_dim();
        let mut values = Vec::with_capacity(points.len() * n);
        let mut grads = Vec::with_capacity(points.len() * n);
        for p in points {
            let (v, g) = self.eval_2d(p[0], p[1]);
            values.extend(v);
            grads.extend(g);
        }
        BasisTable { n_fn: n, n_pts: points.len(), values, grads }
    }
}

/// Point-major evaluation tables of a scalar basis.
#[derive(Clone, Debug)]
pub struct BasisTable {
    pub n_fn: usize,
    pub n_pts: usize,
    /// `values[q * n_fn + i]`
    pub values: Vec<f64>,
    /// reference gradients, same indexing
    pub grads: Vec<[f64; 2]>,
}

/// Trial field basis of the given order.
pub fn field_basis(order: usize) -> Basis {
    Basis { kind: BasisKind::FieldScalar, order }
}

/// Edge basis: trace (H1-type, vertex hats plus bubbles) or flux (Legendre).
pub fn edge_basis(order: usize, flux: bool) -> Basis {
    Basis { kind: if flux { BasisKind::EdgeFlux } else { BasisKind::EdgeTrace }, order }
}

/// Test-slot kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestSlot {
    /// `v`, vector
    V,
    /// `q`, scalar
    Q,
    /// `M`, full 2x2 tensor with row-wise divergence
    M,
    /// `S`, symmetric tensor
    S,
}

/// Enriched broken test basis for one slot.
pub fn test_basis(order: usize, slot: TestSlot) -> Basis {
    let kind = match slot {
        TestSlot::V => BasisKind::TestVector,
        TestSlot::Q => BasisKind::TestScalar,
        TestSlot::M => BasisKind::TestTensor,
        TestSlot::S => BasisKind::TestSymTensor,
    };
    Basis { kind, order }
}

/// Reference divergence tables of a tensor test basis: for every scalar
/// function `phi` placed in component `(i, j)` (`c = 2i + j`), the row-wise
/// divergence has the single nonzero entry `d phi / d x_j` in row `i`.
/// Returns `div[q][c * n + f] = [row0, row1]`.
pub fn tensor_divergence_table(basis: &Basis, points: &[[f64; 2]]) -> Vec<Vec<[f64; 2]>> {
    assert_eq!(basis.kind, BasisKind::TestTensor);
    let n = basis.scalar_dim();
    points
        .iter()
        .map(|p| {
            let (_, g) = basis.eval_2d(p[0], p[1]);
            let mut out = vec![[0.0; 2]; 4 * n];
            for c in 0..4 {
                let (i, j) = (c / 2, c % 2);
                for f in 0..n {
                    out[c * n + f][i] = g[f][j];
                }
            }
            out
        })
        .collect()
}

/// Coefficient map for restricting an edge polynomial to a sub-interval.
///
/// The child edge is parametrized by `t in [-1,1]`, with `t = -1` at parent
/// parameter `s0` and `t = 1` at `s1` (so `s0 > s1` describes a reversed
/// child). Returns `C` with `child_coeffs = C * parent_coeffs`; this is exact
/// since the restriction of a degree-`k` polynomial is again degree `k`.
pub fn restriction_matrix(basis: &Basis, s0: f64, s1: f64) -> DMatrix<f64> {
    let n = basis.scalar_dim();
    let quad = gauss_rule(n + 1);
    let mut mass = vec![0.0; n * n];
    let mut rhs = vec![0.0; n * n];
    for (&t, &w) in quad.points.iter().zip(&quad.weights) {
        let s = s0 + 0.5 * (t + 1.0) * (s1 - s0);
        let (ct, _) = basis.eval_1d(t);
        let (ps, _) = basis.eval_1d(s);
        for a in 0..n {
            for b in 0..n {
                mass[a + b * n] += w * ct[a] * ct[b];
                rhs[a + b * n] += w * ct[a] * ps[b];
            }
        }
    }
    let chol = DenseCholesky::factor(n, mass).expect("edge mass matrix is SPD");
    chol.solve(&mut rhs, n);
    DMatrix::from_column_slice(n, n, &rhs)
}

/// Restriction to child `child_index` of a parent edge (0: `[-1,0]`, 1: `[0,1]`),
/// with the child oriented like the parent.
pub fn constrain_edge_dofs(basis: &Basis, child_index: usize) -> DMatrix<f64> {
    match child_index {
        0 => restriction_matrix(basis, -1.0, 0.0),
        1 => restriction_matrix(basis, 0.0, 1.0),
        _ => panic!("child index must be 0 or 1"),
    }
}
