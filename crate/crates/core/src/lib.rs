//! Joint estimation of heterogeneous treatment effects across many
//! experiments and many outcome metrics with a low-rank (LR) learner.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`numerics`]: dense linear algebra, seeded random streams, ridge
//!   regression, Jacobi SVD and ALS matrix completion.
//! - [`dataset`]: the on-disk data model (units, observations, splits,
//!   ground-truth potential outcomes).
//! - [`synthgen`]: the linear synthetic generator and the semi-synthetic
//!   transform from classifier logits.
//! - [`lrlearner`]: the LR-learner itself, `v(x)' A_j e^t_k`, with analytic
//!   gradients, Adam training and frozen-extractor fine-tuning.
//! - [`tlearner`]: independent ridge T-learners, one pair per cell.
//! - [`evaluate`]: PEHE, μ-risk, τ-risk and ITE correlation diagnostics.
//! - [`rank`]: singular spectra and bi-cross-validation effective rank.
//! - [`cli`]: the `hte` command line driver.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod lrlearner;
pub mod numerics;
pub mod rank;
pub mod synthgen;
pub mod tlearner;

pub use error::{Error, Result};
