//! Likelihood-based sufficient dimension reduction for regressions with
//! many predictors.
//!
//! Predictors are modelled given the response, `X | y ~ N(μ + Γβf_y, Δ)`,
//! with the error covariance split along the reduction `Γ` and its
//! orthogonal complement. The reduction `ΓᵀX` is fitted by maximizing a
//! profile likelihood over the Grassmann manifold, its dimension is chosen
//! by a sequence of likelihood-ratio tests, and forward predictions of `y`
//! are formed from the fitted inverse densities.
//!
//! Principal-component, isotropic, OLS, PLS and screening baselines live in
//! [`baselines`]; simulation designs and studies in [`studylab`].

pub mod baselines;
pub mod error;
pub mod estimation;
pub mod model;
pub mod numerics;
pub mod prediction;
pub mod studylab;

pub use error::{Error, Result};
pub use estimation::{
    fit_extended, fit_pc, fit_pfc_iso, lrt_dimension, reduce, select_dimension, ExtendedFit, ExtendedProblem,
    GrassmannOptions, TestResult,
};
pub use model::{build_basis, BasisSpec, Dataset, DesignBasis, FittedReduction, ModelKind};
pub use numerics::{Basis, SymmetricMatrix};
pub use prediction::Predictor;
