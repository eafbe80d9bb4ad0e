//! Tensor-train reduced basis (TT-RB) toolkit for parameterized elliptic and
//! parabolic PDEs on Cartesian tensor-product grids.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensors`]: dense multi-axis arrays, axis bookkeeping, contraction
//!   primitives and the Kronecker index bijection.
//! - [`sparse`]: compressed sparse matrices, banded Cholesky, triangular
//!   solves and rank-truncated SVD with the relative energy criterion.
//! - [`fe`]: Q1 finite element assembly on Cartesian grids, norm matrices,
//!   Dirichlet handling and the tensor-product sparsity map.
//! - [`fom`]: parametric full-order model, theta-scheme time stepping,
//!   parameter sampling and snapshot generation.
//! - [`reduce`]: TPOD and the Euclidean / norm-orthogonal TT-SVD variants.
//! - [`hyper`]: empirical interpolation (EIM loop, ST-MDEIM, TT-MDEIM) for
//!   residuals and Jacobians.
//! - [`rom`]: core-wise Galerkin projection, the online reduced solve, error
//!   metrics and the a posteriori estimate.

#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::too_many_arguments)]

pub mod fe;
pub mod fom;
pub mod hyper;
pub mod reduce;
pub mod rom;
pub mod sparse;
pub mod tensors;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("argument error: {0}")]
    Argument(String),
    #[error("matrix not SPD: nonpositive pivot at index {index}")]
    NotSpd { index: usize },
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("solver failure at step {step}: {message}")]
    SolveStep { step: usize, message: String },
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("degenerate interpolation at column {column}")]
    Degenerate { column: usize },
    #[error("svd did not converge")]
    SvdNonConvergence,
    #[error("diagnostic refused: {0}")]
    Diagnostic(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn argument(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}
