//! Dense numerics shared by every other module.
//!
//! Everything here is deterministic: the only source of randomness is an
//! explicit [`RngStream`], and all reductions run in a fixed order.

mod als;
mod matrix;
mod ridge;
mod rng;
mod svd;

pub use als::{als_complete, als_complete_traced, AlsTrace, DEFAULT_ALS_REG};
pub use matrix::{dot, Matrix};
pub use ridge::{cholesky_solve, lu_solve, ridge_fit, RidgeFit, RidgeSystem};
pub use rng::{DrawKind, RngStream};
pub use svd::{jacobi_svd, singular_values, Svd};
