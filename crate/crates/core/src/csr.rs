//! Compressed sparse row storage and the sequential kernels built on it.

use crate::error::{Error, Result};
use crate::Real;

/// Sparse matrix in compressed sparse row format.
///
/// Invariants: `row_start` is non-decreasing with `row_start[0] == 0` and
/// `row_start[n_rows] == col_idx.len() == values.len()`; within each row the
/// column indices are strictly increasing and below `n_cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T = f64> {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_start: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Build from raw parts, checking every invariant.
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        row_start: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<T>,
    ) -> Result<Self> {
        if row_start.len() != n_rows + 1 {
            return Err(Error::DimensionMismatch(format!(
                "row_start has length {}, expected {}",
                row_start.len(),
                n_rows + 1
            )));
        }
        if row_start[0] != 0 || *row_start.last().unwrap() != col_idx.len() {
            return Err(Error::DimensionMismatch(format!(
                "row_start bounds ({}, {}) do not match nnz {}",
                row_start[0],
                row_start.last().unwrap(),
                col_idx.len()
            )));
        }
        if col_idx.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "col_idx length {} != values length {}",
                col_idx.len(),
                values.len()
            )));
        }
        for r in 0..n_rows {
            if row_start[r] > row_start[r + 1] {
                return Err(Error::DimensionMismatch(format!(
                    "row_start decreases at row {r}"
                )));
            }
            let row = &col_idx[row_start[r]..row_start[r + 1]];
            for (k, &c) in row.iter().enumerate() {
                if c >= n_cols {
                    return Err(Error::DimensionMismatch(format!(
                        "column index {c} out of bounds in row {r} (n_cols = {n_cols})"
                    )));
                }
                if k > 0 && row[k - 1] >= c {
                    return Err(Error::DimensionMismatch(format!(
                        "column indices not strictly increasing in row {r}"
                    )));
                }
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_start,
            col_idx,
            values,
        })
    }

    /// Empty matrix with the given shape.
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_start: vec![0; n_rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_start: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    /// Build from (row, col, value) triplets; duplicates are summed in input
    /// order, rows and columns come out sorted.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, T)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, T)> = Vec::new();
        for (r, c, v) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::DimensionMismatch(format!(
                    "triplet ({r}, {c}) out of bounds for {n_rows}x{n_cols}"
                )));
            }
            entries.push((r, c, v));
        }
        // Stable sort keeps duplicate contributions in input order.
        entries.sort_by_key(|a| (a.0, a.1));
        let mut row_start = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<T> = Vec::with_capacity(entries.len());
        let mut rows = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            if let (Some(&lc), Some(lv)) = (col_idx.last(), values.last_mut()) {
                if rows.last() == Some(&r) && lc == c {
                    *lv = *lv + v;
                    continue;
                }
            }
            rows.push(r);
            col_idx.push(c);
            values.push(v);
        }
        for &r in &rows {
            row_start[r + 1] += 1;
        }
        for r in 0..n_rows {
            row_start[r + 1] += row_start[r];
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_start,
            col_idx,
            values,
        })
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Column indices of one row (sorted ascending).
    #[inline]
    pub fn row_cols(&self, row: usize) -> &[usize] {
        &self.col_idx[self.row_start[row]..self.row_start[row + 1]]
    }

    /// Values of one row, aligned with [`Self::row_cols`].
    #[inline]
    pub fn row_values(&self, row: usize) -> &[T] {
        &self.values[self.row_start[row]..self.row_start[row + 1]]
    }

    /// Entry lookup by binary search within the row; absent entries are zero.
    pub fn get(&self, row: usize, col: usize) -> T {
        let cols = self.row_cols(row);
        match cols.binary_search(&col) {
            Ok(k) => self.row_values(row)[k],
            Err(_) => T::zero(),
        }
    }

    /// Structural and numerical transpose.
    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let row_start = counts.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![T::zero(); self.nnz()];
        let mut cursor = counts;
        for r in 0..self.n_rows {
            for k in self.row_start[r]..self.row_start[r + 1] {
                let c = self.col_idx[k];
                let pos = cursor[c];
                cursor[c] += 1;
                col_idx[pos] = r;
                values[pos] = self.values[k];
            }
        }
        Self {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_start,
            col_idx,
            values,
        }
    }

    /// Exact structural and numerical symmetry check.
    pub fn is_symmetric(&self) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        let t = self.transpose();
        self.row_start == t.row_start && self.col_idx == t.col_idx && self.values == t.values
    }

    /// Dense row-major copy, for small diagnostics and test oracles.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::zero(); self.n_cols]; self.n_rows];
        for r in 0..self.n_rows {
            for (k, &c) in self.row_cols(r).iter().enumerate() {
                d[r][c] = self.row_values(r)[k];
            }
        }
        d
    }

    /// Cast every value through `f64` into another scalar type.
    pub fn cast<U: Real>(&self) -> CsrMatrix<U> {
        CsrMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_start: self.row_start.clone(),
            col_idx: self.col_idx.clone(),
            values: self
                .values
                .iter()
                .map(|&v| U::from_f64(v.as_f64()))
                .collect(),
        }
    }
}

/// Sequential sparse-matrix-by-vector product `a * x`.
///
/// Accumulation within each row runs in ascending column order; distributed
/// products reproduce this order bitwise.
pub fn spmv_seq<T: Real>(a: &CsrMatrix<T>, x: &[T]) -> Result<Vec<T>> {
    if a.n_cols != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} columns, vector has {} entries",
            a.n_cols,
            x.len()
        )));
    }
    let mut y = vec![T::zero(); a.n_rows];
    for r in 0..a.n_rows {
        let mut acc = T::zero();
        for k in a.row_start[r]..a.row_start[r + 1] {
            acc = acc + a.values[k] * x[a.col_idx[k]];
        }
        y[r] = acc;
    }
    Ok(y)
}
