//! Dense column-major kernels: blocked Cholesky, triangular solves and a
//! thin wrapper over `matrixmultiply::dgemm`.
//!
//! All matrices are stored column-major with an explicit leading dimension.
//! Only the lower triangle of a Cholesky factor is referenced.

use crate::FactorError;

/// Block size used by the blocked kernels.
const NB: usize = 64;

/// General matrix product on strided storage.
///
/// Computes `C = alpha * A * B + beta * C` with `A` of shape `m x k`,
/// `B` of shape `k x n` and `C` of shape `m x n`. Strides are given as
/// `(row_stride, col_stride)` pairs so transposes are free.
///
/// # Safety
/// The caller guarantees that every addressed element is in bounds and that
/// `c` does not alias `a` or `b` over the addressed region.
#[allow(clippy::too_many_arguments)]
pub unsafe fn gemm_raw(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: *const f64,
    a_strides: (isize, isize),
    b: *const f64,
    b_strides: (isize, isize),
    beta: f64,
    c: *mut f64,
    c_strides: (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    matrixmultiply::dgemm(m, k, n, alpha, a, a_strides.0, a_strides.1, b, b_strides.0, b_strides.1, beta, c, c_strides.0, c_strides.1);
}

/// Whether an operand is used as stored or transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

/// Safe column-major `C = alpha * op(A) * op(B) + beta * C`.
///
/// `m x n` is the shape of `C`, `k` the inner dimension.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    opa: Op,
    opb: Op,
    m: usize,
    n: usize,
    k: usize,
    alpha: f64,
    a: &[f64],
    lda: usize,
    b: &[f64],
    ldb: usize,
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let (ar, ac) = match opa {
        Op::N => (m, k),
        Op::T => (k, m),
    };
    let (br, bc) = match opb {
        Op::N => (k, n),
        Op::T => (n, k),
    };
    if k > 0 {
        assert!(ar <= lda && (ac - 1) * lda + ar <= a.len(), "gemm: A out of bounds");
        assert!(br <= ldb && (bc - 1) * ldb + br <= b.len(), "gemm: B out of bounds");
    }
    assert!(m <= ldc && (n - 1) * ldc + m <= c.len(), "gemm: C out of bounds");
    let sa = match opa {
        Op::N => (1, lda as isize),
        Op::T => (lda as isize, 1),
    };
    let sb = match opb {
        Op::N => (1, ldb as isize),
        Op::T => (ldb as isize, 1),
    };
    if k == 0 {
        for j in 0..n {
            for i in 0..m {
                c[i + j * ldc] *= beta;
            }
        }
        return;
    }
    // SAFETY: bounds checked above; `c` is a distinct mutable borrow.
    unsafe { gemm_raw(m, k, n, alpha, a.as_ptr(), sa, b.as_ptr(), sb, beta, c.as_mut_ptr(), (1, ldc as isize)) }
}

unsafe fn potrf_unblocked(n: usize, a: *mut f64, lda: usize) -> Result<(), (usize, f64)> {
    for j in 0..n {
        let cj = a.add(j * lda);
        let mut d = *cj.add(j);
        for k in 0..j {
            let v = *a.add(j + k * lda);
            d -= v * v;
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err((j, d));
        }
        let d = d.sqrt();
        *cj.add(j) = d;
        // Column update: a[i, j] -= sum_k a[i, k] a[j, k]
        for k in 0..j {
            let ajk = *a.add(j + k * lda);
            if ajk != 0.0 {
                let ck = a.add(k * lda);
                for i in (j + 1)..n {
                    *cj.add(i) -= *ck.add(i) * ajk;
                }
            }
        }
        let inv = 1.0 / d;
        for i in (j + 1)..n {
            *cj.add(i) *= inv;
        }
    }
    Ok(())
}

/// Solves `X * L^T = B` in place for `X` (`m x n`), `L` lower triangular `n x n`.
unsafe fn trsm_rlt_raw(m: usize, n: usize, l: *const f64, ldl: usize, b: *mut f64, ldb: usize) {
    let mut j0 = 0;
    while j0 < n {
        let jb = NB.min(n - j0);
        if j0 > 0 {
            // B[:, j0..j0+jb] -= X[:, 0..j0] * L[j0..j0+jb, 0..j0]^T
            gemm_raw(m, j0, jb, -1.0, b, (1, ldb as isize), l.add(j0), (ldl as isize, 1), 1.0, b.add(j0 * ldb), (1, ldb as isize));
        }
        for j in j0..j0 + jb {
            let bj = b.add(j * ldb);
            for k in j0..j {
                let ljk = *l.add(j + k * ldl);
                if ljk != 0.0 {
                    let bk = b.add(k * ldb);
                    for i in 0..m {
                        *bj.add(i) -= *bk.add(i) * ljk;
                    }
                }
            }
            let inv = 1.0 / *l.add(j + j * ldl);
            for i in 0..m {
                *bj.add(i) *= inv;
            }
        }
        j0 += jb;
    }
}

/// In-place blocked Cholesky `A = L L^T` of the leading `n x n` block.
///
/// On failure returns the local index of the first non-positive pivot and
/// the offending pivot value.
pub fn potrf(n: usize, a: &mut [f64], lda: usize) -> Result<(), (usize, f64)> {
    if n == 0 {
        return Ok(());
    }
    assert!(n <= lda && (n - 1) * lda + n <= a.len(), "potrf: out of bounds");
    let p = a.as_mut_ptr();
    // SAFETY: all accesses are within the leading n x n block checked above;
    // the gemm updates read the panel below the diagonal block and write the
    // trailing block, which are disjoint.
    unsafe {
        let mut k0 = 0;
        while k0 < n {
            let kb = NB.min(n - k0);
            let akk = p.add(k0 + k0 * lda);
            potrf_unblocked(kb, akk, lda).map_err(|(i, v)| (i + k0, v))?;
            let rest = n - k0 - kb;
            if rest > 0 {
                let a21 = p.add(k0 + kb + k0 * lda);
                trsm_rlt_raw(rest, kb, akk, lda, a21, lda);
                // Lower trailing update, one column block at a time.
                let mut j0 = 0;
                while j0 < rest {
                    let jb = NB.min(rest - j0);
                    let c = p.add(k0 + kb + j0 + (k0 + kb + j0) * lda);
                    gemm_raw(
                        rest - j0,
                        kb,
                        jb,
                        -1.0,
                        a21.add(j0),
                        (1, lda as isize),
                        a21.add(j0),
                        (lda as isize, 1),
                        1.0,
                        c,
                        (1, lda as isize),
                    );
                    j0 += jb;
                }
            }
            k0 += kb;
        }
    }
    Ok(())
}

/// Solves `X * L^T = B` in place (`B` is `m x n`, `L` is `n x n` lower).
pub fn trsm_right_lower_t(m: usize, n: usize, l: &[f64], ldl: usize, b: &mut [f64], ldb: usize) {
    if m == 0 || n == 0 {
        return;
    }
    assert!((n - 1) * ldl + n <= l.len() && n <= ldl);
    assert!((n - 1) * ldb + m <= b.len() && m <= ldb);
    // SAFETY: bounds checked above, `l` and `b` are distinct borrows.
    unsafe { trsm_rlt_raw(m, n, l.as_ptr(), ldl, b.as_mut_ptr(), ldb) }
}

/// Same as [`trsm_right_lower_t`] but with `L` and `B` inside one buffer.
///
/// # Safety
/// The two regions must not overlap and must be in bounds.
pub unsafe fn trsm_right_lower_t_raw(m: usize, n: usize, l: *const f64, ldl: usize, b: *mut f64, ldb: usize) {
    trsm_rlt_raw(m, n, l, ldl, b, ldb)
}

/// Solves `L * X = B` in place (`L` lower `n x n`, `B` is `n x nrhs`).
pub fn trsm_left_lower(n: usize, nrhs: usize, l: &[f64], ldl: usize, b: &mut [f64], ldb: usize) {
    if n == 0 || nrhs == 0 {
        return;
    }
    assert!((n - 1) * ldl + n <= l.len() && n <= ldl);
    assert!((nrhs - 1) * ldb + n <= b.len() && n <= ldb);
    let mut i0 = 0;
    while i0 < n {
        let ib = NB.min(n - i0);
        if i0 > 0 {
            // B[i0..i0+ib, :] -= L[i0..i0+ib, 0..i0] * X[0..i0, :]
            // SAFETY: reads rows 0..i0 of B and writes rows i0..i0+ib.
            unsafe {
                let bp = b.as_mut_ptr();
                gemm_raw(
                    ib,
                    i0,
                    nrhs,
                    -1.0,
                    l.as_ptr().add(i0),
                    (1, ldl as isize),
                    bp,
                    (1, ldb as isize),
                    1.0,
                    bp.add(i0),
                    (1, ldb as isize),
                );
            }
        }
        for r in 0..nrhs {
            let col = &mut b[r * ldb..r * ldb + n];
            for k in i0..i0 + ib {
                let xk = col[k] / l[k + k * ldl];
                col[k] = xk;
                if xk != 0.0 {
                    let lk = &l[k * ldl..k * ldl + i0 + ib];
                    for i in (k + 1)..(i0 + ib) {
                        col[i] -= lk[i] * xk;
                    }
                }
            }
        }
        i0 += ib;
    }
}

/// Solves `L^T * X = B` in place (`L` lower `n x n`, `B` is `n x nrhs`).
pub fn trsm_left_lower_t(n: usize, nrhs: usize, l: &[f64], ldl: usize, b: &mut [f64], ldb: usize) {
    if n == 0 || nrhs == 0 {
        return;
    }
    assert!((n - 1) * ldl + n <= l.len() && n <= ldl);
    assert!((nrhs - 1) * ldb + n <= b.len() && n <= ldb);
    let nblocks = n.div_ceil(NB);
    for blk in (0..nblocks).rev() {
        let i0 = blk * NB;
        let ib = NB.min(n - i0);
        let tail = i0 + ib;
        if tail < n {
            // B[i0..tail, :] -= L[tail..n, i0..tail]^T * X[tail..n, :]
            // SAFETY: reads rows tail..n of B and writes rows i0..tail.
            unsafe {
                let bp = b.as_mut_ptr();
                gemm_raw(
                    ib,
                    n - tail,
                    nrhs,
                    -1.0,
                    l.as_ptr().add(tail + i0 * ldl),
                    (ldl as isize, 1),
                    bp.add(tail),
                    (1, ldb as isize),
                    1.0,
                    bp.add(i0),
                    (1, ldb as isize),
                );
            }
        }
        for r in 0..nrhs {
            let col = &mut b[r * ldb..r * ldb + n];
            for i in (i0..tail).rev() {
                let li = &l[i * ldl..i * ldl + tail];
                let mut s = col[i];
                for k in (i + 1)..tail {
                    s -= li[k] * col[k];
                }
                col[i] = s / li[i];
            }
        }
    }
}

/// A dense Cholesky factorization `A = L L^T` of a symmetric positive
/// definite matrix stored column-major.
#[derive(Clone, Debug)]
pub struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    /// Factors the `n x n` column-major matrix `a` (only the lower triangle
    /// is read).
    pub fn factor(n: usize, mut a: Vec<f64>) -> Result<Self, FactorError> {
        if a.len() != n * n {
            return Err(FactorError::Dimension(format!("expected {} entries for a {n}x{n} matrix, got {}", n * n, a.len())));
        }
        potrf(n, &mut a, n).map_err(|(index, value)| FactorError::NotPositiveDefinite { index, node: index, value })?;
        for j in 0..n {
            for i in 0..j {
                a[i + j * n] = 0.0;
            }
        }
        Ok(Self { n, l: a })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// The lower-triangular factor, column-major (upper part is zero).
    pub fn l(&self) -> &[f64] {
        &self.l
    }

    /// Overwrites `b` (`n x nrhs`) with `L^{-1} b`.
    pub fn solve_lower(&self, b: &mut [f64], nrhs: usize) {
        trsm_left_lower(self.n, nrhs, &self.l, self.n, b, self.n);
    }

    /// Overwrites `b` (`n x nrhs`) with `L^{-T} b`.
    pub fn solve_lower_t(&self, b: &mut [f64], nrhs: usize) {
        trsm_left_lower_t(self.n, nrhs, &self.l, self.n, b, self.n);
    }

    /// Overwrites `b` (`n x nrhs`) with `A^{-1} b`.
    pub fn solve(&self, b: &mut [f64], nrhs: usize) {
        self.solve_lower(b, nrhs);
        self.solve_lower_t(b, nrhs);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn random_spd(n: usize, rng: &mut StdRng) -> Vec<f64> {
        let m = n + 3;
        let g: Vec<f64> = (0..n * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut a = vec![0.0; n * n];
        gemm(Op::N, Op::T, n, n, m, 1.0, &g, n, &g, n, 0.0, &mut a, n);
        for i in 0..n {
            a[i + i * n] += 1e-3;
        }
        a
    }

    fn naive_mul(n: usize, m: usize, k: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; n * m];
        for j in 0..m {
            for i in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i + p * n] * b[p + j * k];
                }
                c[i + j * n] = s;
            }
        }
        c
    }

    #[test]
    fn blocked_cholesky_reconstructs_matrix() {
        let mut rng = StdRng::seed_from_u64(7);
        for &n in &[1usize, 5, 63, 64, 65, 150, 201] {
            let a = random_spd(n, &mut rng);
            let f = DenseCholesky::factor(n, a.clone()).unwrap();
            let mut llt = vec![0.0; n * n];
            gemm(Op::N, Op::T, n, n, n, 1.0, f.l(), n, f.l(), n, 0.0, &mut llt, n);
            let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (x, y) in llt.iter().zip(&a) {
                assert!((x - y).abs() <= 1e-11 * scale * n as f64, "n={n}");
            }
        }
    }

    #[test]
    fn solves_match_naive_products() {
        let mut rng = StdRng::seed_from_u64(11);
        let n = 130;
        let nrhs = 7;
        let a = random_spd(n, &mut rng);
        let f = DenseCholesky::factor(n, a.clone()).unwrap();
        let x: Vec<f64> = (0..n * nrhs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut b = naive_mul(n, nrhs, n, &a, &x);
        f.solve(&mut b, nrhs);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-8);
        }
        // L^{-1} then L^{-T} separately
        let mut y = naive_mul(n, nrhs, n, f.l(), &x);
        f.solve_lower(&mut y, nrhs);
        for (u, v) in y.iter().zip(&x) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn right_triangular_solve() {
        let mut rng = StdRng::seed_from_u64(3);
        let n = 97;
        let m = 41;
        let a = random_spd(n, &mut rng);
        let f = DenseCholesky::factor(n, a).unwrap();
        let x: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // B = X L^T
        let mut b = vec![0.0; m * n];
        gemm(Op::N, Op::T, m, n, n, 1.0, &x, m, f.l(), n, 0.0, &mut b, m);
        trsm_right_lower_t(m, n, f.l(), n, &mut b, m);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn indefinite_matrix_reports_pivot() {
        let n = 4;
        let mut a = vec![0.0; 16];
        for i in 0..n {
            a[i + i * n] = 1.0;
        }
        a[2 + 2 * n] = -1.0;
        match DenseCholesky::factor(n, a) {
            Err(FactorError::NotPositiveDefinite { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gemm_transposes() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 1.0, 2.0, 1.0, 0.0]; // 3x2 or 2x3
        let mut c = [0.0; 4];
        // A (2x3) * B (3x2)
        gemm(Op::N, Op::N, 2, 2, 3, 1.0, &a, 2, &b, 3, 0.0, &mut c, 2);
        assert_eq!(c, [1.0 + 5.0, 2.0 + 6.0, 2.0 + 3.0, 4.0 + 4.0]);
        // A^T A, 3x3
        let mut d = [0.0; 9];
        gemm(Op::T, Op::N, 3, 3, 2, 1.0, &a, 2, &a, 2, 0.0, &mut d, 3);
        assert_eq!(d[0], 5.0);
        assert_eq!(d[1 + 2 * 3], 3.0 * 5.0 + 4.0 * 6.0);
    }
}
