//! Dense and sparse symmetric linear algebra plus 1D adaptive quadrature.

mod dense;
mod quadrature;
mod sparse;

pub use dense::{eig_min, spectral_norm, DenseSym, SymEigen};
pub use quadrature::{adaptive_quadrature, MAX_DEPTH};
pub use sparse::{factor_spd, rcm_ordering, solve, SparseSpd, SpdFactor, TripletBuilder};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("matrix is not positive definite (pivot {pivot}: {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("quadrature tolerance {tol:e} not reached (local estimate {estimate:e})")]
    ToleranceNotReached { tol: f64, estimate: f64 },
    #[error("invalid interval [{a}, {b}]")]
    InvalidInterval { a: f64, b: f64 },
    #[error("non-finite value encountered")]
    NonFinite,
}
