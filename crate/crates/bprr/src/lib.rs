//! Bayesian partial reduced-rank (BPRR) regression.
//!
//! A multivariate linear model `Y = X C + E` in which an unknown subset of
//! the responses (the *low-rank group*) shares a rank-`r` coefficient
//! sub-matrix `C1 = B A'`, while the remaining responses keep a full-rank
//! sub-matrix `C2`. Group membership, the rank, and all regression
//! parameters are inferred jointly by a partially collapsed Gibbs sampler:
//!
//! 1. the allocation vector is updated by a Metropolized shotgun stochastic
//!    search driven by a Laplace-approximated marginal likelihood,
//! 2. the rank is drawn from its discrete marginal posterior,
//! 3. the coefficient blocks, the error covariance, and the inclusion
//!    probability follow from conjugate conditionals.
//!
//! The crate also ships the competitor models used for benchmarking
//! (full-rank, full low-rank, pre-specified partial low-rank) behind a
//! common [`model::RegressionModel`] trait, a simulation/forecast harness,
//! and single-chain MCMC convergence diagnostics.

pub mod diagnostics;
pub mod dist;
pub mod error;
pub mod evidence;
pub mod io;
pub mod linalg;
pub mod model;
pub mod sampler;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
pub use types::{Allocation, Dataset, Hyperparameters, ModelState, RankState};
