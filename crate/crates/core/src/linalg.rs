//! Sparse matrices on a fixed pattern, LU solves and symmetric eigenvalue helpers.

use std::sync::{Arc, OnceLock};

use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::prelude::*;
use faer::{Mat, Par, Side};

use crate::error::{Error, Result};

/// Column-compressed sparsity pattern of a square matrix.
#[derive(Debug)]
pub struct SparsePattern {
    n: usize,
    symbolic: SymbolicSparseColMat<usize>,
    lu: OnceLock<SymbolicLu<usize>>,
}

impl SparsePattern {
    /// Builds a pattern from `(row, col)` pairs; duplicates are merged.
    pub fn from_entries(n: usize, mut entries: Vec<(usize, usize)>) -> Self {
        for i in 0..n {
            entries.push((i, i));
        }
        entries.sort_unstable_by_key(|&(r, c)| (c, r));
        entries.dedup();
        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        for &(r, c) in &entries {
            col_ptr[c + 1] += 1;
            row_idx.push(r);
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        let symbolic = SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx);
        SparsePattern { n, symbolic, lu: OnceLock::new() }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.symbolic.row_idx().len()
    }

    fn col_ptr(&self) -> &[usize] {
        self.symbolic.col_ptr()
    }

    fn row_idx(&self) -> &[usize] {
        self.symbolic.row_idx()
    }

    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let cp = self.col_ptr();
        let (s, e) = (cp[col], cp[col + 1]);
        self.row_idx()[s..e].binary_search(&row).ok().map(|k| s + k)
    }

    fn symbolic_lu(&self) -> Result<&SymbolicLu<usize>> {
        if let Some(s) = self.lu.get() {
            return Ok(s);
        }
        let s = SymbolicLu::try_new(self.symbolic.as_ref()).map_err(|e| Error::LinearSolve(format!("{e:?}")))?;
        Ok(self.lu.get_or_init(|| s))
    }
}

/// Square sparse matrix whose values live on a shared pattern.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    pattern: Arc<SparsePattern>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(pattern: Arc<SparsePattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        SparseMatrix { pattern, values }
    }

    pub fn pattern(&self) -> &Arc<SparsePattern> {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Adds `v` to entry `(row, col)`, which must be in the pattern.
    pub fn add(&mut self, row: usize, col: usize, v: f64) {
        let k = self
            .pattern
            .position(row, col)
            .unwrap_or_else(|| panic!("entry ({row}, {col}) not in sparsity pattern"));
        self.values[k] += v;
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pattern.position(row, col).map_or(0.0, |k| self.values[k])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim());
        let mut y = vec![0.0; self.dim()];
        let cp = self.pattern.col_ptr();
        let ri = self.pattern.row_idx();
        for c in 0..self.dim() {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for k in cp[c]..cp[c + 1] {
                y[ri[k]] += self.values[k] * xc;
            }
        }
        y
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.mul_vec(y))
    }

    /// `self += alpha * other`; both matrices must share the pattern.
    pub fn axpy(&mut self, alpha: f64, other: &SparseMatrix) {
        assert!(Arc::ptr_eq(&self.pattern, &other.pattern), "pattern mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    /// Nonzero entries as `(row, col, value)` in column-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let cp = self.pattern.col_ptr();
        let ri = self.pattern.row_idx();
        let mut out = Vec::with_capacity(self.values.len());
        for c in 0..self.dim() {
            for k in cp[c]..cp[c + 1] {
                out.push((ri[k], c, self.values[k]));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.dim(), self.dim());
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn max_asymmetry(&self) -> f64 {
        self.triplets()
            .iter()
            .map(|&(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max)
    }

    pub fn lu(&self) -> Result<LuSolver> {
        if self.dim() == 0 {
            return Ok(LuSolver { lu: None, n: 0 });
        }
        let sym = self.pattern.symbolic_lu()?.clone();
        let mat = SparseColMatRef::new(self.pattern.symbolic.as_ref(), &self.values);
        let lu = Lu::try_new_with_symbolic(sym, mat).map_err(|e| Error::LinearSolve(format!("{e:?}")))?;
        Ok(LuSolver { lu: Some(lu), n: self.dim() })
    }
}

/// Factorized sparse matrix.
pub struct LuSolver {
    lu: Option<Lu<usize, f64>>,
    n: usize,
}

impl LuSolver {
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(b.len(), self.n);
        let Some(lu) = &self.lu else { return Ok(Vec::new()) };
        let mut x = Mat::from_fn(self.n, 1, |i, _| b[i]);
        lu.solve_in_place(x.as_mut());
        let out: Vec<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::LinearSolve("non-finite solution (singular matrix?)".into()));
        }
        Ok(out)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Eigenvalues (ascending) of the symmetric pencil `A x = lambda B x` with `B` positive definite.
pub fn generalized_eigenvalues(a: &Mat<f64>, b: &Mat<f64>) -> Result<Vec<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let llt = b
        .llt(Side::Lower)
        .map_err(|e| Error::LinearSolve(format!("mass matrix not positive definite: {e:?}")))?;
    let l = llt.L().to_owned();
    let mut y = a.to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l.as_ref(), y.as_mut(), Par::Seq);
    let mut z = y.transpose().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l.as_ref(), z.as_mut(), Par::Seq);
    // symmetrize against roundoff
    let zs = Mat::from_fn(n, n, |i, j| 0.5 * (z[(i, j)] + z[(j, i)]));
    zs.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::LinearSolve(format!("eigen solver: {e:?}")))
}

pub fn symmetric_eigenvalues(a: &Mat<f64>) -> Result<Vec<f64>> {
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let n = a.nrows();
    let s = Mat::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    s.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::LinearSolve(format!("eigen solver: {e:?}")))
}

/// Smallest eigenvalue of `A x = lambda B x` for sparse SPD `A`, `B`.
///
/// Dense for small systems, shifted inverse iteration otherwise.
pub fn smallest_generalized_eigenvalue(a: &SparseMatrix, b: &SparseMatrix) -> Result<f64> {
    let n = a.dim();
    if n == 0 {
        return Err(Error::InvalidInput("empty system has no eigenvalues".into()));
    }
    if n <= 900 {
        let ev = generalized_eigenvalues(&a.to_dense(), &b.to_dense())?;
        return Ok(ev[0]);
    }
    let lu = a.lu()?;
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 101) as f64 / 101.0).collect();
    let mut lambda = f64::INFINITY;
    for _ in 0..2000 {
        let bx = b.mul_vec(&x);
        let y = lu.solve(&bx)?;
        let ny = b.quad_form(&y).sqrt();
        x = y.iter().map(|v| v / ny).collect();
        let rq = a.quad_form(&x) / b.quad_form(&x);
        if (lambda - rq).abs() <= 1e-13 * rq.abs() {
            return Ok(rq);
        }
        lambda = rq;
    }
    Ok(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize) -> SparseMatrix {
        let mut e = Vec::new();
        for i in 0..n {
            if i > 0 {
                e.push((i, i - 1));
                e.push((i - 1, i));
            }
        }
        let p = Arc::new(SparsePattern::from_entries(n, e));
        let mut m = SparseMatrix::zeros(p);
        for i in 0..n {
            m.add(i, i, 2.0);
            if i > 0 {
                m.add(i, i - 1, -1.0);
                m.add(i - 1, i, -1.0);
            }
        }
        m
    }

    #[test]
    fn lu_solves_laplacian() {
        let m = tridiag(50);
        let x: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let b = m.mul_vec(&x);
        let y = m.lu().unwrap().solve(&b).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn smallest_eigenvalue_matches_closed_form() {
        let n = 40;
        let m = tridiag(n);
        let p = m.pattern().clone();
        let mut id = SparseMatrix::zeros(p);
        for i in 0..n {
            id.add(i, i, 1.0);
        }
        let exact = 2.0 - 2.0 * (std::f64::consts::PI / (n as f64 + 1.0)).cos();
        let got = smallest_generalized_eigenvalue(&m, &id).unwrap();
        assert!((got - exact).abs() < 1e-12);
    }

    #[test]
    fn axpy_and_triplets() {
        let mut a = tridiag(4);
        let b = a.clone();
        a.axpy(-1.0, &b);
        assert!(a.values().iter().all(|&v| v == 0.0));
        assert_eq!(b.triplets().len(), 10);
        assert_eq!(b.max_asymmetry(), 0.0);
    }
}
