//! Matrix storage shared by the objectives and data loaders: dense or
//! compressed sparse row, with deterministic (index-ordered) products.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("row {row}: column indices must be strictly increasing")]
    UnsortedIndices { row: usize },
    #[error("row {row}: duplicate column index {col}")]
    DuplicateIndex { row: usize, col: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row (column, value) lists. Columns must be strictly
    /// increasing within each row.
    pub fn from_rows(ncols: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self, LinalgError> {
        let nrows = rows.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for (r, row) in rows.iter().enumerate() {
            let mut last: Option<usize> = None;
            for &(c, v) in row {
                if c >= ncols {
                    return Err(LinalgError::DimensionMismatch(format!(
                        "column {c} out of bounds (ncols = {ncols})"
                    )));
                }
                match last {
                    Some(p) if c == p => return Err(LinalgError::DuplicateIndex { row: r, col: c }),
                    Some(p) if c < p => return Err(LinalgError::UnsortedIndices { row: r }),
                    _ => {}
                }
                if !v.is_finite() {
                    return Err(LinalgError::NonFinite { row: r, col: c });
                }
                last = Some(c);
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(CsrMatrix { nrows, ncols, indptr, indices, values })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        self.indices[lo..hi].iter().copied().zip(self.values[lo..hi].iter().copied())
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut out = DVector::zeros(self.nrows);
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for (c, v) in self.row(r) {
                acc += v * x[c];
            }
            out[r] = acc;
        }
        out
    }

    pub fn t_matvec(&self, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.nrows);
        let mut out = DVector::zeros(self.ncols);
        for r in 0..self.nrows {
            let yr = y[r];
            for (c, v) in self.row(r) {
                out[c] += v * yr;
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }
}

/// Data matrix in either dense or sparse layout.
#[derive(Debug, Clone)]
pub enum Matrix {
    Dense(DMatrix<f64>),
    Sparse(CsrMatrix),
}

impl Matrix {
    pub fn nrows(&self) -> usize {
        match self {
            Matrix::Dense(m) => m.nrows(),
            Matrix::Sparse(m) => m.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            Matrix::Dense(m) => m.ncols(),
            Matrix::Sparse(m) => m.ncols(),
        }
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Matrix::Dense(m) => m * x,
            Matrix::Sparse(m) => m.matvec(x),
        }
    }

    pub fn t_matvec(&self, y: &DVector<f64>) -> DVector<f64> {
        match self {
            Matrix::Dense(m) => m.transpose() * y,
            Matrix::Sparse(m) => m.t_matvec(y),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Matrix::Dense(m) => m.clone(),
            Matrix::Sparse(m) => m.to_dense(),
        }
    }

    /// AᵀA, materialized densely. Row-ordered accumulation keeps the result
    /// bit-reproducible for sparse inputs.
    pub fn gram_dense(&self) -> DMatrix<f64> {
        match self {
            Matrix::Dense(m) => m.transpose() * m,
            Matrix::Sparse(m) => {
                let n = m.ncols();
                let mut g = DMatrix::zeros(n, n);
                for r in 0..m.nrows() {
                    let lo = m.indptr[r];
                    let hi = m.indptr[r + 1];
                    for a in lo..hi {
                        let (ca, va) = (m.indices[a], m.values[a]);
                        for b in lo..hi {
                            g[(ca, m.indices[b])] += va * m.values[b];
                        }
                    }
                }
                g
            }
        }
    }

    /// max_i |(Aᵀ y)_i|, the scaling used to resolve penalty levels.
    pub fn t_matvec_inf_norm(&self, y: &DVector<f64>) -> f64 {
        self.t_matvec(y).amax()
    }
}
