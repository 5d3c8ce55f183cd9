//! Shared test oracles: straightforward dense implementations, independent
//! of the library's computational paths.

use afsai_core::CsrMatrix;
use rand::rngs::StdRng;
use rand::Rng;

pub fn tridiagonal(n: usize) -> CsrMatrix {
    let mut t = Vec::new();
    for i in 0..n {
        if i > 0 {
            t.push((i, i - 1, -1.0));
        }
        t.push((i, i, 2.0));
        if i + 1 < n {
            t.push((i, i + 1, -1.0));
        }
    }
    CsrMatrix::from_triplets(n, n, t).unwrap()
}

/// Sparse random symmetric matrix with a dominant diagonal shift: SPD.
pub fn random_spd_sparse(n: usize, fill: f64, rng: &mut StdRng) -> CsrMatrix {
    let mut t = Vec::new();
    for i in 0..n {
        for j in 0..i {
            if rng.gen::<f64>() < fill {
                let v = rng.gen_range(-1.0..1.0);
                t.push((i, j, v));
                t.push((j, i, v));
            }
        }
        t.push((i, i, 1.0 + fill * n as f64 + rng.gen_range(0.0..2.0)));
    }
    CsrMatrix::from_triplets(n, n, t).unwrap()
}

/// Dense random symmetric matrix shifted to be SPD.
pub fn random_spd_dense(n: usize, rng: &mut StdRng) -> CsrMatrix {
    let mut t = Vec::new();
    for i in 0..n {
        for j in 0..i {
            let v = rng.gen_range(-1.0..1.0);
            t.push((i, j, v));
            t.push((j, i, v));
        }
        t.push((i, i, n as f64 + rng.gen_range(0.0..2.0)));
    }
    CsrMatrix::from_triplets(n, n, t).unwrap()
}

pub fn dense_of(a: &CsrMatrix) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; a.n_cols]; a.n_rows];
    for r in 0..a.n_rows {
        for (k, &c) in a.row_cols(r).iter().enumerate() {
            d[r][c] = a.row_values(r)[k];
        }
    }
    d
}

/// `G A G^T` computed densely.
pub fn triple_product(g: &CsrMatrix, a: &CsrMatrix) -> Vec<Vec<f64>> {
    let n = a.n_rows;
    let gd = dense_of(g);
    let ad = dense_of(a);
    let mut ga = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            if gd[i][k] != 0.0 {
                for j in 0..n {
                    ga[i][j] += gd[i][k] * ad[k][j];
                }
            }
        }
    }
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += ga[i][k] * gd[j][k];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn frobenius_distance_from_identity(m: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            s += (v - want) * (v - want);
        }
    }
    s.sqrt()
}

/// Plain dense lower Cholesky; `None` for non-SPD input.
pub fn dense_cholesky_lower(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Inverse of a dense lower-triangular matrix by forward substitution.
pub fn invert_lower(l: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = l.len();
    let mut inv = vec![vec![0.0; n]; n];
    for col in 0..n {
        let mut e = vec![0.0; n];
        e[col] = 1.0;
        for i in 0..n {
            let mut s = e[i];
            for k in 0..i {
                s -= l[i][k] * inv[k][col];
            }
            inv[i][col] = s / l[i][i];
        }
    }
    inv
}

/// Kaporin number `(tr(B)/n) / det(B)^(1/n)` of a dense SPD matrix.
pub fn kaporin_oracle(b: &[Vec<f64>]) -> f64 {
    let n = b.len();
    let trace: f64 = (0..n).map(|i| b[i][i]).sum();
    let l = dense_cholesky_lower(b).expect("oracle input must be SPD");
    let logdet: f64 = (0..n).map(|i| 2.0 * l[i][i].ln()).sum();
    (trace / n as f64) / (logdet / n as f64).exp()
}
