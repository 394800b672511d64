//! Constrained conditional maximum likelihood estimation (CCMLE) for the
//! means of normal populations selected by ranking their sample means.
//!
//! The crate is organised bottom-up:
//!
//! - [`kernels`]: normal density, distribution function, inverse Mills ratio
//!   and adaptive quadrature.
//! - [`ordering`]: the probability `P_μ(X₁ > X₂ > … > X_p)` of the observed
//!   ranking, its logarithm and gradient, plus a Monte Carlo oracle.
//! - [`ccmle`]: the estimator itself: the exact two-population solution and
//!   a projected ascent solver over the monotone cone.
//! - [`experiments`]: selection-respecting MSE simulations and stratified
//!   bootstrap intervals, with CSV/JSON export.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ccmle;
pub mod error;
pub mod experiments;
pub mod kernels;
pub mod ordering;

pub use ccmle::{
    ccmle, ccmle_numeric, ccmle_p2, conditional_log_likelihood, project_monotone, taylor_start,
    CcmleResult, MonotoneCone, ObservedSample, OptimizerSettings, SolverPath,
};
pub use error::{Error, Result};
pub use kernels::QuadratureSpec;
pub use ordering::{
    grad_log_ordering_probability, log_ordering_probability, mc_ordering_probability,
    ordering_probability, MeanConfig, OrderingProb, ProbMethod,
};
