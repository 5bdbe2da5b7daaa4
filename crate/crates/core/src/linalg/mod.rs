//! Sparse matrices, block factorizations and Krylov solvers.

mod banded;
mod block;
mod gmres;
#[cfg(feature = "idr")]
mod idr;
mod schur;
mod sparse;

pub use banded::{reverse_cuthill_mckee, BandedLu, ZeroPivot};
pub use block::{block_forward_substitute, first_entry_above_blocks, BlockLowerTriangular, BlockPartition};
pub use gmres::gmres;
#[cfg(feature = "idr")]
pub use idr::idr_s;
pub use schur::{BlockSystem, SchurPreconditioner, DEFAULT_COLUMN_GROUP, DEFAULT_REFINEMENT};
pub use sparse::SparseMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("invalid block partition")]
    BadPartition,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not block lower triangular: entry ({row}, {col})")]
    NotBlockLowerTriangular { row: usize, col: usize },
    #[error("diagonal block {block} is singular (zero pivot in column {column})")]
    SingularBlock { block: usize, column: usize },
    #[error("Schur complement is singular")]
    SingularSchur,
    #[error("Krylov breakdown after {iterations} iterations")]
    Breakdown { iterations: usize },
    #[error("tolerance must be positive and finite")]
    InvalidTolerance,
    #[error("shadow space dimension must be positive")]
    InvalidShadowDimension,
}

/// `y = A x`
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// `y = P^{-1} r`
pub trait Preconditioner {
    fn apply(&self, r: &[f64], y: &mut [f64]);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64], y: &mut [f64]) {
        y.copy_from_slice(r);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KrylovConfig {
    /// Relative residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    pub restart: Option<usize>,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 1000,
            restart: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KrylovResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Relative residual history, starting with 1 at iteration 0.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub true_relative_residual: f64,
}

impl KrylovResult {
    fn trivial(x: Vec<f64>) -> Self {
        Self {
            x,
            iterations: 0,
            residuals: vec![0.0],
            converged: true,
            true_relative_residual: 0.0,
        }
    }
}

fn check_dims(a: &dyn LinearOperator, b: &[f64], cfg: &KrylovConfig) -> Result<usize, LinalgError> {
    if !(cfg.tol > 0.0 && cfg.tol.is_finite()) {
        return Err(LinalgError::InvalidTolerance);
    }
    let n = a.dim();
    if b.len() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            found: b.len(),
        });
    }
    Ok(n)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
