//! Matrix Market coordinate-format ingestion and export.
//!
//! Accepted headers: `%%MatrixMarket matrix coordinate real general` and
//! `... real symmetric`. Symmetric files list one triangle and are expanded
//! to full storage on read; duplicates are summed; indices are 1-based on
//! disk and 0-based in memory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::csr::CsrMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MmSymmetry {
    General,
    Symmetric,
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Read a Matrix Market coordinate file into CSR storage.
pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<CsrMatrix> {
    let file = File::open(path.as_ref())?;
    read_matrix_market_from(BufReader::new(file))
}

/// Same as [`read_matrix_market`] but from any buffered reader.
pub fn read_matrix_market_from(reader: impl BufRead) -> Result<CsrMatrix> {
    let mut lines = reader.lines().enumerate();

    let (lineno, header) = match lines.next() {
        Some((i, l)) => (i + 1, l?),
        None => return Err(parse_error(1, "empty file")),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() < 5 || fields[0] != "%%MatrixMarket" {
        return Err(parse_error(lineno, "expected '%%MatrixMarket' header"));
    }
    if fields[1] != "matrix" || fields[2] != "coordinate" {
        return Err(parse_error(
            lineno,
            "only 'matrix coordinate' files are supported",
        ));
    }
    if fields[3] != "real" {
        return Err(parse_error(
            lineno,
            format!("unsupported value type '{}', expected 'real'", fields[3]),
        ));
    }
    let symmetry = match fields[4] {
        "general" => MmSymmetry::General,
        "symmetric" => MmSymmetry::Symmetric,
        other => {
            return Err(parse_error(
                lineno,
                format!("unsupported symmetry '{other}', expected 'general' or 'symmetric'"),
            ))
        }
    };

    // Dimension line: first non-comment, non-blank line after the header.
    let mut dims: Option<(usize, usize, usize)> = None;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let mut it = trimmed.split_whitespace();
        if dims.is_none() {
            let n_rows: usize = it
                .next()
                .ok_or_else(|| parse_error(lineno, "missing row count"))?
                .parse()
                .map_err(|_| parse_error(lineno, "cannot parse row count"))?;
            let n_cols: usize = it
                .next()
                .ok_or_else(|| parse_error(lineno, "missing column count"))?
                .parse()
                .map_err(|_| parse_error(lineno, "cannot parse column count"))?;
            let nnz: usize = it
                .next()
                .ok_or_else(|| parse_error(lineno, "missing non-zero count"))?
                .parse()
                .map_err(|_| parse_error(lineno, "cannot parse non-zero count"))?;
            dims = Some((n_rows, n_cols, nnz));
            triplets.reserve(nnz);
            continue;
        }
        let (n_rows, n_cols, nnz) = dims.unwrap();
        let row: usize = it
            .next()
            .ok_or_else(|| parse_error(lineno, "missing row index"))?
            .parse()
            .map_err(|_| parse_error(lineno, "cannot parse row index"))?;
        let col: usize = it
            .next()
            .ok_or_else(|| parse_error(lineno, "missing column index"))?
            .parse()
            .map_err(|_| parse_error(lineno, "cannot parse column index"))?;
        let value: f64 = it
            .next()
            .ok_or_else(|| parse_error(lineno, "missing value"))?
            .parse()
            .map_err(|_| parse_error(lineno, "cannot parse value"))?;
        if row == 0 || col == 0 || row > n_rows || col > n_cols {
            return Err(parse_error(
                lineno,
                format!("index ({row}, {col}) out of bounds for {n_rows}x{n_cols} (1-based)"),
            ));
        }
        if triplets.len() >= nnz && symmetry == MmSymmetry::General {
            return Err(parse_error(lineno, "more entries than declared"));
        }
        triplets.push((row - 1, col - 1, value));
        if symmetry == MmSymmetry::Symmetric && row != col {
            triplets.push((col - 1, row - 1, value));
        }
    }

    let (n_rows, n_cols, _) = dims.ok_or_else(|| parse_error(2, "missing dimension line"))?;
    CsrMatrix::from_triplets(n_rows, n_cols, triplets)
}

/// Write CSR storage as `matrix coordinate real general`, all stored entries
/// listed with 1-based indices. `read_matrix_market` of the output reproduces
/// canonical (sorted, deduplicated) input exactly.
pub fn write_matrix_market(path: impl AsRef<Path>, a: &CsrMatrix) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", a.n_rows, a.n_cols, a.nnz())?;
    for r in 0..a.n_rows {
        for (k, &c) in a.row_cols(r).iter().enumerate() {
            // `{:e}` round-trips f64 exactly through parse.
            writeln!(w, "{} {} {:e}", r + 1, c + 1, a.row_values(r)[k])?;
        }
    }
    w.flush()?;
    Ok(())
}
