//! Error type shared by every module of the engine.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Matrix Market parse failure; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is {n_rows}x{n_cols}, solver entry points require a square matrix")]
    NotSquare { n_rows: usize, n_cols: usize },

    #[error("matrix is not symmetric: {0}")]
    NotSymmetric(String),

    /// A dense Cholesky pivot fell at or below the pivot floor.
    #[error("cholesky breakdown: pivot {pivot:e} at index {index} (matrix not positive definite)")]
    Breakdown { index: usize, pivot: f64 },

    /// The diagonal-scaling quadratic form of a row came out non-positive.
    #[error("non-positive pivot {value:e} at row {row}")]
    NonPositivePivot { row: usize, value: f64 },

    /// A per-row setup failure, tagged with the global row index.
    #[error("setup failed at row {row}: {source}")]
    RowSetup {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("matrix has {n} rows, dense diagnostic limited to {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("invalid rank {rank} (ensemble has {n_ranks} ranks)")]
    InvalidRank { rank: usize, n_ranks: usize },

    #[error("cannot split {n} rows over {n_ranks} ranks")]
    BadPartition { n: usize, n_ranks: usize },

    #[error("message protocol error: {0}")]
    Protocol(String),

    #[error("missing halo block from rank {peer}")]
    MissingBlock { peer: usize },

    #[error("non-finite scalar at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// Attach the global row index to an error raised inside a row solve.
    pub fn at_row(self, row: usize) -> Error {
        Error::RowSetup {
            row,
            source: Box::new(self),
        }
    }
}
