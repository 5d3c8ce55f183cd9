//! Sparse linear-solver engine built around the adaptive factored sparse
//! approximate inverse (aFSAI) preconditioner.
//!
//! The crate provides:
//!
//! * sequential sparse/dense kernels and Matrix Market ingestion ([`csr`],
//!   [`dense`], [`mm`], [`kaporin`]),
//! * the adaptive FSAI setup with per-row pattern growth driven by the
//!   Kaporin-number gradient ([`fsai`]),
//! * a block-partitioned distributed matrix format with setup-time halo
//!   gathering ([`dsmat`]),
//! * an in-process rank/message layer with non-blocking send/receive and
//!   deterministic collectives ([`comm`], [`exactsum`]),
//! * an overlapped distributed matrix-vector product ([`spmv`]),
//! * a preconditioned conjugate-gradient driver ([`krylov`]),
//! * a benchmark harness with a 7-point Poisson generator ([`poisson`],
//!   [`bench`](mod@bench)).
//!
//! Determinism is a design goal throughout: identical inputs produce
//! bit-identical factors, iterates and reports, for any rank count and any
//! message-delivery schedule.

pub mod bench;
pub mod comm;
pub mod csr;
pub mod dense;
pub mod dsmat;
pub mod error;
pub mod exactsum;
pub mod fsai;
pub mod kaporin;
pub mod krylov;
pub mod mm;
pub mod poisson;
pub mod spmv;

pub use csr::CsrMatrix;
pub use dsmat::{CommMatrix, DSMat, DistVector, Partition};
pub use error::{Error, Result};
pub use fsai::{FsaiFactor, FsaiParams};
pub use krylov::{SolveParams, SolveReport};

/// Scalar type of the setup kernels: `f64` for ordinary runs, `f32` when the
/// factor is built in single precision and recast afterwards.
pub trait Real:
    num_traits::Float + std::iter::Sum + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Cholesky pivots at or below this value signal loss of positive
    /// definiteness instead of producing infinities.
    const PIVOT_FLOOR: Self;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f64 {
    const PIVOT_FLOOR: Self = 1e-30;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    const PIVOT_FLOOR: Self = 1e-20;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}
