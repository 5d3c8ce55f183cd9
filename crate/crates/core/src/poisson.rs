//! 7-point finite-difference discretization of the Poisson problem on a
//! box grid.

use crate::csr::CsrMatrix;
use crate::error::{Error, Result};

/// Assemble the 7-point stencil matrix for an `nx * ny * nz` grid with
/// Dirichlet truncation at the boundary: every diagonal entry is 6 and each
/// in-bounds neighbor contributes -1, so the matrix is symmetric positive
/// definite for any grid shape. Unknowns are numbered x-fastest:
/// `m = i + nx * (j + ny * k)`.
pub fn generate_poisson7(nx: usize, ny: usize, nz: usize) -> Result<CsrMatrix> {
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(Error::Config("grid dims must be at least 1".into()));
    }
    let n = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nz))
        .and_then(|v| v.checked_mul(7)) // nnz bound must fit too
        .map(|_| nx * ny * nz)
        .ok_or_else(|| Error::Config("grid size overflows".into()))?;

    let mut row_start = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(7 * n);
    let mut values = Vec::with_capacity(7 * n);
    row_start.push(0);
    let idx = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let m = idx(i, j, k);
                // Ascending column order: -nx*ny, -nx, -1, 0, +1, +nx, +nx*ny.
                if k > 0 {
                    col_idx.push(m - nx * ny);
                    values.push(-1.0);
                }
                if j > 0 {
                    col_idx.push(m - nx);
                    values.push(-1.0);
                }
                if i > 0 {
                    col_idx.push(m - 1);
                    values.push(-1.0);
                }
                col_idx.push(m);
                values.push(6.0);
                if i + 1 < nx {
                    col_idx.push(m + 1);
                    values.push(-1.0);
                }
                if j + 1 < ny {
                    col_idx.push(m + nx);
                    values.push(-1.0);
                }
                if k + 1 < nz {
                    col_idx.push(m + nx * ny);
                    values.push(-1.0);
                }
                row_start.push(col_idx.len());
            }
        }
    }
    CsrMatrix::new(n, n, row_start, col_idx, values)
}
