//! Compressed sparse row matrices and direct solvers.
//!
//! The factorizations are backed by `faer`'s sparse LU and Cholesky with
//! default (sequential, deterministic) settings. A CSR matrix is handed to
//! faer as the CSC storage of its transpose, so solves go through the
//! transposed factorization.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu, SymbolicLlt, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{MatMut, Side};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SparseError {
    #[error("index ({row}, {col}) out of range for a {n_rows}x{n_cols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is singular: {0}")]
    Singular(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from `(row, col, value)` triplets. Duplicates are summed and
    /// entries that sum to exactly zero are dropped.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        entries: &[(usize, usize, f64)],
    ) -> Result<Self, SparseError> {
        let mut counts = vec![0usize; n_rows + 1];
        for &(i, j, _) in entries {
            if i >= n_rows || j >= n_cols {
                return Err(SparseError::IndexOutOfRange {
                    row: i,
                    col: j,
                    n_rows,
                    n_cols,
                });
            }
            counts[i + 1] += 1;
        }
        for i in 0..n_rows {
            counts[i + 1] += counts[i];
        }
        // Bucket by row keeping input order, so duplicate sums are
        // deterministic.
        let mut next = counts.clone();
        let mut bucket = vec![(0usize, 0.0f64); entries.len()];
        for &(i, j, v) in entries {
            bucket[next[i]] = (j, v);
            next[i] += 1;
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..n_rows {
            let row = &mut bucket[counts[i]..counts[i + 1]];
            row.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut sum = 0.0;
                while k < row.len() && row[k].0 == j {
                    sum += row[k].1;
                    k += 1;
                }
                if sum != 0.0 {
                    col_idx.push(j);
                    values.push(sum);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Build from raw CSR arrays, checking the structural invariants.
    pub fn from_raw(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, SparseError> {
        let bad = |m: &str| Err(SparseError::DimensionMismatch(m.to_string()));
        if row_ptr.len() != n_rows + 1 || row_ptr[0] != 0 {
            return bad("row_ptr must have n_rows + 1 entries starting at 0");
        }
        if col_idx.len() != values.len() || *row_ptr.last().unwrap() != col_idx.len() {
            return bad("row_ptr, col_idx and values disagree on nnz");
        }
        for i in 0..n_rows {
            if row_ptr[i] > row_ptr[i + 1] {
                return bad("row_ptr must be nondecreasing");
            }
            let cols = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad("column indices must be strictly increasing within a row");
            }
            if let Some(&j) = cols.iter().find(|&&j| j >= n_cols) {
                return Err(SparseError::IndexOutOfRange {
                    row: i,
                    col: j,
                    n_rows,
                    n_cols,
                });
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let entries: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(d.len(), d.len(), &entries).expect("diagonal indices in range")
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self::from_triplets(n_rows, n_cols, &[]).expect("no entries")
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    /// Entry `(i, j)`, zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        if x.len() != self.n_cols {
            return Err(SparseError::DimensionMismatch(format!(
                "matvec with {} columns and a vector of length {}",
                self.n_cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        Ok(y)
    }

    /// `y = A x` without dimension checks beyond debug assertions.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                col_idx[next[j]] = i;
                values[next[j]] = v;
                next[j] += 1;
            }
        }
        Self {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_ptr: counts,
            col_idx,
            values,
        }
    }

    /// Sparse product `self * other` (Gustavson's row-by-row algorithm).
    pub fn matmul(&self, other: &CsrMatrix) -> Result<Self, SparseError> {
        if self.n_cols != other.n_rows {
            return Err(SparseError::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.n_rows, self.n_cols, other.n_rows, other.n_cols
            )));
        }
        let mut marker = vec![usize::MAX; other.n_cols];
        let mut acc = vec![0.0; other.n_cols];
        let mut row_ptr = Vec::with_capacity(self.n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut touched = Vec::new();
        row_ptr.push(0);
        for i in 0..self.n_rows {
            touched.clear();
            let (a_cols, a_vals) = self.row(i);
            for (&k, &a) in a_cols.iter().zip(a_vals) {
                let (b_cols, b_vals) = other.row(k);
                for (&j, &b) in b_cols.iter().zip(b_vals) {
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = 0.0;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                if acc[j] != 0.0 {
                    col_idx.push(j);
                    values.push(acc[j]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            n_rows: self.n_rows,
            n_cols: other.n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// `R A P` as `(R A) P`.
    pub fn triple_product(
        r: &CsrMatrix,
        a: &CsrMatrix,
        p: &CsrMatrix,
    ) -> Result<Self, SparseError> {
        r.matmul(a)?.matmul(p)
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &CsrMatrix) -> Result<Self, SparseError> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(SparseError::DimensionMismatch(
                "matrix sum shapes differ".into(),
            ));
        }
        let mut entries = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.n_rows {
            let (c, v) = self.row(i);
            entries.extend(c.iter().zip(v).map(|(&j, &x)| (i, j, x)));
            let (c, v) = other.row(i);
            entries.extend(c.iter().zip(v).map(|(&j, &x)| (i, j, alpha * x)));
        }
        Self::from_triplets(self.n_rows, self.n_cols, &entries)
    }

    /// Scale column `j` by `d[j]`.
    pub fn scale_columns(&self, d: &[f64]) -> Self {
        assert_eq!(d.len(), self.n_cols);
        let mut out = self.clone();
        for (v, &j) in out.values.iter_mut().zip(&self.col_idx) {
            *v *= d[j];
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        euclidean_norm(&self.values)
    }

    /// Largest absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.n_rows)
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, row) in d.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                row[j] = x;
            }
        }
        d
    }

    fn check_square(&self) -> Result<(), SparseError> {
        if self.n_rows != self.n_cols {
            return Err(SparseError::DimensionMismatch(format!(
                "factorization needs a square matrix, got {}x{}",
                self.n_rows, self.n_cols
            )));
        }
        if let Some(i) = (0..self.n_rows).find(|&i| self.row(i).0.is_empty()) {
            return Err(SparseError::Singular(format!("row {i} is empty")));
        }
        Ok(())
    }

    fn as_transposed_csc(&self) -> SparseColMatRef<'_, usize, f64> {
        let sym = SymbolicSparseColMatRef::new_checked(
            self.n_cols,
            self.n_rows,
            &self.row_ptr,
            None,
            &self.col_idx,
        );
        SparseColMatRef::new(sym, &self.values)
    }
}

/// Deterministic left-to-right 2-norm.
pub fn euclidean_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reusable sparse LU factorization with a fill-reducing ordering.
pub struct LuFactorization {
    n: usize,
    symbolic: SymbolicLu<usize>,
    lu: Lu<usize, f64>,
    pattern: (Vec<usize>, Vec<usize>),
}

impl LuFactorization {
    pub fn new(a: &CsrMatrix) -> Result<Self, SparseError> {
        a.check_square()?;
        let at = a.as_transposed_csc();
        let symbolic = SymbolicLu::try_new(at.symbolic())
            .map_err(|e| SparseError::Singular(format!("symbolic LU failed: {e:?}")))?;
        let lu = numeric_lu(&symbolic, a)?;
        Ok(Self {
            n: a.n_rows,
            symbolic,
            lu,
            pattern: (a.row_ptr.clone(), a.col_idx.clone()),
        })
    }

    /// Refactor a matrix, reusing the symbolic analysis when the sparsity
    /// pattern is unchanged.
    pub fn refactor(&mut self, a: &CsrMatrix) -> Result<(), SparseError> {
        if a.n_rows == self.n && self.pattern.0 == a.row_ptr && self.pattern.1 == a.col_idx {
            a.check_square()?;
            self.lu = numeric_lu(&self.symbolic, a)?;
            Ok(())
        } else {
            *self = Self::new(a)?;
            Ok(())
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, SparseError> {
        if b.len() != self.n {
            return Err(SparseError::DimensionMismatch(format!(
                "right-hand side of length {} for an order-{} system",
                b.len(),
                self.n
            )));
        }
        let mut x = b.to_vec();
        self.lu
            .solve_transpose_in_place(MatMut::from_column_major_slice_mut(&mut x, self.n, 1));
        finite_or_singular(x)
    }
}

fn numeric_lu(symbolic: &SymbolicLu<usize>, a: &CsrMatrix) -> Result<Lu<usize, f64>, SparseError> {
    Lu::try_new_with_symbolic(symbolic.clone(), a.as_transposed_csc())
        .map_err(|e| SparseError::Singular(format!("LU factorization failed: {e:?}")))
}

/// Sparse Cholesky of a symmetric positive definite matrix. Only the lower
/// triangle is read.
pub struct Cholesky {
    n: usize,
    llt: Llt<usize, f64>,
}

/// Symbolic Cholesky analysis, reusable for matrices with the same pattern.
#[derive(Clone)]
pub struct CholeskyAnalysis {
    symbolic: SymbolicLlt<usize>,
    pattern: (Vec<usize>, Vec<usize>),
}

impl CholeskyAnalysis {
    pub fn new(a: &CsrMatrix) -> Result<Self, SparseError> {
        a.check_square()?;
        // For symmetric A the transposed CSC view is A itself; its upper
        // triangle in CSC is the CSR lower triangle.
        let symbolic = SymbolicLlt::try_new(a.as_transposed_csc().symbolic(), Side::Upper)
            .map_err(|e| SparseError::Singular(format!("symbolic Cholesky failed: {e:?}")))?;
        Ok(Self {
            symbolic,
            pattern: (a.row_ptr.clone(), a.col_idx.clone()),
        })
    }

    pub fn matches(&self, a: &CsrMatrix) -> bool {
        self.pattern.0 == a.row_ptr && self.pattern.1 == a.col_idx
    }
}

impl Cholesky {
    pub fn new(a: &CsrMatrix) -> Result<Self, SparseError> {
        Self::with_analysis(&CholeskyAnalysis::new(a)?, a)
    }

    pub fn with_analysis(analysis: &CholeskyAnalysis, a: &CsrMatrix) -> Result<Self, SparseError> {
        if !analysis.matches(a) {
            return Self::new(a);
        }
        a.check_square()?;
        let llt = Llt::try_new_with_symbolic(
            analysis.symbolic.clone(),
            a.as_transposed_csc(),
            Side::Upper,
        )
        .map_err(|e| SparseError::Singular(format!("Cholesky failed: {e:?}")))?;
        Ok(Self { n: a.n_rows, llt })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, SparseError> {
        if b.len() != self.n {
            return Err(SparseError::DimensionMismatch(format!(
                "right-hand side of length {} for an order-{} system",
                b.len(),
                self.n
            )));
        }
        let mut x = b.to_vec();
        self.llt
            .solve_in_place(MatMut::from_column_major_slice_mut(&mut x, self.n, 1));
        finite_or_singular(x)
    }
}

fn finite_or_singular(x: Vec<f64>) -> Result<Vec<f64>, SparseError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(SparseError::Singular(
            "solution has non-finite entries".into(),
        ))
    }
}

/// One-shot LU solve.
pub fn lu_solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, SparseError> {
    LuFactorization::new(a)?.solve(b)
}
