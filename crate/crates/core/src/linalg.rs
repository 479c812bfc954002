//! Small dense linear algebra: row-major matrices, Cholesky with jitter
//! escalation, pivoted Gaussian elimination for indefinite (bordered) systems,
//! and a greedy rank-revealing orthogonal basis for constraint matrices.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{check_len, invalid, Error, Result};

/// First jitter tried after a failed factorization.
pub const JITTER_START: f64 = 1e-10;
/// Largest jitter tried before giving up.
pub const JITTER_CEILING: f64 = 1e-4;
/// Default relative tolerance for [`rank_revealing_basis`].
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Dense real matrix stored in row-major order.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len(rows * cols, data.len())?;
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(alloc::format!("matrix entry {v}")));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_len(cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Self::from_row_major(rows.len(), cols, data)
    }

    /// Builds a matrix whose columns are the given equal-length vectors.
    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Result<Self> {
        let rows = columns.first().map_or(0, |c| c.as_ref().len());
        let mut m = Self::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            check_len(rows, c.as_ref().len())?;
            for (i, v) in c.as_ref().iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.cols, x.len())?;
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_len(self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Adds `value` to every diagonal entry.
    pub fn add_diagonal(&mut self, value: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += value;
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Lower-triangular Cholesky factor `L` with `A + jitter·I = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Matrix,
    jitter: f64,
}

impl Cholesky {
    /// Factorizes a symmetric positive-definite matrix, escalating diagonal
    /// jitter from [`JITTER_START`] by ×10 up to [`JITTER_CEILING`] when a
    /// pivot is non-positive.
    pub fn factor(a: &Matrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::DimensionMismatch {
                expected: a.rows,
                found: a.cols,
            });
        }
        if !a.is_symmetric(1e-12) {
            return Err(invalid("matrix is not symmetric"));
        }
        if let Some(lower) = factor_with_jitter(a, 0.0) {
            return Ok(Self { lower, jitter: 0.0 });
        }
        let mut jitter = JITTER_START;
        while jitter <= JITTER_CEILING * (1.0 + 1e-9) {
            if let Some(lower) = factor_with_jitter(a, jitter) {
                log::debug!("cholesky succeeded with jitter {jitter:e}");
                return Ok(Self { lower, jitter });
            }
            jitter *= 10.0;
        }
        Err(Error::NotPositiveDefinite {
            jitter: JITTER_CEILING,
        })
    }

    /// Diagonal jitter that was needed for the factorization (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.lower.rows
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    /// Solves `L y = b` by forward substitution.
    pub fn solve_lower(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        check_len(n, b.len())?;
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        Ok(y)
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        let l = &self.lower;
        let mut x = self.solve_lower(b)?;
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        Ok(x)
    }
}

fn factor_with_jitter(a: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = a.rows;
    let max_diag = (0..n).fold(0.0f64, |m, i| m.max(a[(i, i)].abs())) + jitter;
    let floor = max_diag * n as f64 * f64::EPSILON;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !d.is_finite() || d <= floor {
            return None;
        }
        let d = libm::sqrt(d);
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Solves `A x = b` for symmetric positive-definite `A` (with jitter fallback).
pub fn cholesky_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    check_len(a.rows, b.len())?;
    Cholesky::factor(a)?.solve(b)
}

/// Solves a general square system by Gaussian elimination with partial
/// pivoting. Used for indefinite bordered (KKT) systems.
pub fn lu_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.cols,
        });
    }
    check_len(n, b.len())?;
    let scale = a.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut m = a.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[(r, col)].abs() > m[(piv, col)].abs() {
                piv = r;
            }
        }
        if m[(piv, col)].abs() <= scale * f64::EPSILON {
            return Err(Error::Singular);
        }
        if piv != col {
            for c in 0..n {
                m.data.swap(piv * n + c, col * n + c);
            }
            x.swap(piv, col);
        }
        let p = m[(col, col)];
        for r in col + 1..n {
            let f = m[(r, col)] / p;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                let v = m[(col, c)];
                m[(r, c)] -= f * v;
            }
            x[r] -= f * x[col];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= m[(i, k)] * x[k];
        }
        x[i] = s / m[(i, i)];
    }
    Ok(x)
}

/// Orthonormal basis for the span of a maximal independent subset of columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnBasis {
    /// Retained column indices, in pivot order.
    pub retained: Vec<usize>,
    /// Orthonormal basis vectors (each of length `rows`), one per retained column.
    pub basis: Vec<Vec<f64>>,
}

impl ColumnBasis {
    /// Columns not retained, ascending.
    pub fn dropped(&self, n_cols: usize) -> Vec<usize> {
        (0..n_cols).filter(|j| !self.retained.contains(j)).collect()
    }

    /// Component of `y` orthogonal to the retained span: `y − Q Qᵀ y`.
    pub fn project_out(&self, y: &[f64]) -> Vec<f64> {
        let mut r = y.to_vec();
        for q in &self.basis {
            let c = dot(q, &r);
            for (ri, qi) in r.iter_mut().zip(q) {
                *ri -= c * qi;
            }
        }
        r
    }
}

/// Greedy largest-residual pivoted Gram–Schmidt. A column is retained while
/// its residual norm exceeds `tol × (largest column norm)`; ties go to the
/// lowest column index.
pub fn rank_revealing_basis(z: &Matrix, tol: f64) -> Result<ColumnBasis> {
    if !(tol > 0.0) {
        return Err(invalid("rank tolerance must be positive"));
    }
    let mut residual: Vec<Vec<f64>> = (0..z.cols).map(|j| z.column(j)).collect();
    let largest = residual.iter().map(|c| norm2(c)).fold(0.0, f64::max);
    let threshold = tol * largest;
    let mut retained = Vec::new();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    if largest == 0.0 {
        return Ok(ColumnBasis { retained, basis });
    }
    loop {
        let mut best: Option<(usize, f64)> = None;
        for (j, c) in residual.iter().enumerate() {
            if retained.contains(&j) {
                continue;
            }
            let nrm = norm2(c);
            if best.map_or(true, |(_, b)| nrm > b) {
                best = Some((j, nrm));
            }
        }
        let Some((j, nrm)) = best else { break };
        if nrm <= threshold {
            break;
        }
        let q: Vec<f64> = residual[j].iter().map(|v| v / nrm).collect();
        // two passes keep the residuals orthogonal to working precision
        for _ in 0..2 {
            for (k, c) in residual.iter_mut().enumerate() {
                if k == j || retained.contains(&k) {
                    continue;
                }
                let proj = dot(&q, c);
                for (ci, qi) in c.iter_mut().zip(&q) {
                    *ci -= proj * qi;
                }
            }
        }
        retained.push(j);
        basis.push(q);
    }
    Ok(ColumnBasis { retained, basis })
}
