//! Small dense SPD systems and their Cholesky solver.
//!
//! The adaptive setup gathers one of these per row and per step; dimensions
//! stay in the tens, so a packed single-buffer layout beats anything fancier.

use crate::error::{Error, Result};
use crate::Real;

/// Symmetric positive-definite dense system, upper triangle stored row-major
/// in packed form: entry `(i, j)` with `j >= i` lives at
/// `i * dim - i*(i-1)/2 + (j - i)`.
#[derive(Debug, Clone)]
pub struct DenseSpdSystem<T = f64> {
    pub dim: usize,
    /// Packed upper triangle, `dim * (dim + 1) / 2` entries.
    pub matrix: Vec<T>,
    pub rhs: Vec<T>,
}

#[inline]
fn upper_index(dim: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < dim);
    i * (2 * dim - i + 1) / 2 + (j - i)
}

impl<T: Real> DenseSpdSystem<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            matrix: vec![T::zero(); dim * (dim + 1) / 2],
            rhs: vec![T::zero(); dim],
        }
    }

    /// Set entry `(i, j)` of the upper triangle (`i <= j`).
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let idx = upper_index(self.dim, i, j);
        self.matrix[idx] = v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.matrix[upper_index(self.dim, i, j)]
    }
}

/// Solve `matrix * g = rhs` by an in-place upper Cholesky factorization
/// (`A = R^T R`).
///
/// Returns [`Error::Breakdown`] when a pivot falls at or below the scalar
/// type's pivot floor, which signals loss of positive definiteness.
pub fn cholesky_solve_spd<T: Real>(sys: &DenseSpdSystem<T>) -> Result<Vec<T>> {
    let n = sys.dim;
    // Work in a full row-major lower-triangular scratch: the inner products
    // then run over contiguous row prefixes.
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            l[i * n + j] = sys.matrix[upper_index(n, j, i)];
        }
    }
    for i in 0..n {
        for j in 0..=i {
            let mut s = l[i * n + j];
            {
                let row_i = &l[i * n..i * n + j];
                let row_j = &l[j * n..j * n + j];
                for (a, b) in row_i.iter().zip(row_j) {
                    s = s - *a * *b;
                }
            }
            if i == j {
                if s <= T::PIVOT_FLOOR {
                    return Err(Error::Breakdown {
                        index: i,
                        pivot: s.as_f64(),
                    });
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    // Forward substitution with L, then back substitution with L^T.
    let mut g = sys.rhs.clone();
    for i in 0..n {
        let mut s = g[i];
        for k in 0..i {
            s = s - l[i * n + k] * g[k];
        }
        g[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = g[i];
        for j in i + 1..n {
            s = s - l[j * n + i] * g[j];
        }
        g[i] = s / l[i * n + i];
    }
    Ok(g)
}

/// Log-determinant of a dense SPD matrix given as full rows, via Cholesky.
/// Used by the Kaporin-number diagnostic.
pub fn dense_cholesky_logdet(a: &[Vec<f64>]) -> Result<f64> {
    let n = a.len();
    let mut l = vec![vec![0.0f64; n]; n];
    let mut logdet = 0.0;
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= f64::PIVOT_FLOOR {
                    return Err(Error::Breakdown { index: i, pivot: s });
                }
                l[i][i] = s.sqrt();
                logdet += 2.0 * l[i][i].ln();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Ok(logdet)
}
