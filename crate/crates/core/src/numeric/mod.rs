//! Numerical kernels shared by the pipeline: a sparse SPD solver, 3D convex
//! hulls with volume, and a derivative-free simplex minimizer.
//!
//! Everything here is a pure function over value inputs.

mod cg;
mod hull;
mod simplex;
mod sparse;

pub use cg::{cg_solve, cg_solve_from};
pub use hull::{hull_union_volume, quickhull3, Hull3, Point3, DEGENERACY_RATIO};
pub use simplex::{nelder_mead, Minimum, SimplexState};
pub use sparse::{SparseMatrix, TripletBuilder};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericError {
    #[error("DimensionMismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("NotConverged: final relative residual {residual:e}")]
    NotConverged { residual: f64 },
    #[error("invalid tolerance or scale {0}")]
    InvalidTolerance(f64),
    #[error("matrix flagged symmetric is not symmetric")]
    NotSymmetric,
    #[error("DegenerateGamut: point cloud is coplanar, collinear or coincident")]
    DegenerateGamut,
    #[error("DegenerateGamut: hull construction lost manifoldness")]
    HullConstruction,
    #[error("objective is not finite at the starting point")]
    NonFiniteStart,
}
