//! Filtering, retrofiltering and smoothing for linear Gaussian quantum
//! systems, with the realizability constraint on true-state covariances.
//!
//! Phase-space vectors are ordered `(q1, p1, ..., qN, pN)`. Covariances are
//! symmetric with the convention that the vacuum is `(ħ/2) I`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod linalg;
pub mod model;
pub mod presets;
pub mod realizability;
pub mod riccati;
pub mod smoothing;
pub mod sweep;
pub mod trajectory;

pub use error::{Error, Result};
pub use model::{
    kappa, make_heterodyne, make_homodyne, stack, symplectic_form, CovMatrix, GaussianState, Sign,
    SystemModel, Unravelling,
};
pub use realizability::{
    check_realizable, classify, fits_within, is_psd, param_to_cov, purity, uncertainty_ok, Classifier,
    PutativeParams, RealizabilityReport,
};
pub use riccati::{
    filtered_steady, integrate_cov, realizability_residual, retrofiltered_steady, true_steady,
    unconditioned_bound, SteadySolveConfig, SteadyStates, UnconditionedBound,
};
