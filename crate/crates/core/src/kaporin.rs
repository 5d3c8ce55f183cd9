//! Kaporin condition-number diagnostic for small SPD matrices.

use crate::csr::CsrMatrix;
use crate::dense::dense_cholesky_logdet;
use crate::error::{Error, Result};

/// Largest matrix the dense diagnostic accepts.
pub const DENSE_DIAG_LIMIT: usize = 2000;

/// Kaporin number `(tr(A)/n) / det(A)^(1/n)` of an SPD matrix, computed by a
/// dense Cholesky log-determinant. Always `>= 1`, with equality exactly for
/// multiples of the identity.
pub fn kaporin_number_dense(a: &CsrMatrix) -> Result<f64> {
    if a.n_rows != a.n_cols {
        return Err(Error::NotSquare {
            n_rows: a.n_rows,
            n_cols: a.n_cols,
        });
    }
    if a.n_rows > DENSE_DIAG_LIMIT {
        return Err(Error::TooLarge {
            n: a.n_rows,
            limit: DENSE_DIAG_LIMIT,
        });
    }
    if a.n_rows == 0 {
        return Err(Error::DimensionMismatch("empty matrix".into()));
    }
    let n = a.n_rows as f64;
    let trace: f64 = (0..a.n_rows).map(|i| a.get(i, i)).sum();
    let logdet = dense_cholesky_logdet(&a.to_dense())?;
    Ok((trace / n) / (logdet / n).exp())
}
