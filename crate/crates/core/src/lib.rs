//! Nonparametric maximum likelihood and least squares estimation of
//! k-monotone densities on `(0, ∞)`.
//!
//! A k-monotone density is a scale mixture of Beta(1, k) kernels
//! `k (a - x)_+^{k-1} / a^k`. This crate fits both estimators by support
//! reduction, certifies them through their gradient characterizations,
//! inverts fitted densities back to mixing distributions, and evaluates the
//! local asymptotic minimax lower-bound constants.
//!
//! Module map:
//! - [`mixture`]: samples, mixing measures, kernel and mixture evaluation,
//!   inversion formula, density envelope, sampling.
//! - [`mle`] / [`lse`]: the two estimators and their verifiers.
//! - [`minimax`]: exact rational constants, bound evaluation and the
//!   perturbation family.
//! - [`sim`]: seeded replication studies.
//! - [`cli`]: the `kmono` command-line front end.

pub mod analytic;
pub mod cli;
pub mod error;
pub mod fitfile;
pub mod lse;
pub mod minimax;
pub mod mixture;
pub mod mle;
pub mod numeric;
pub mod qp;
pub mod sim;
mod support;

pub use analytic::{AnalyticDensity, Exponential};
pub use error::{KmError, Result};
pub use mixture::{
    density_bound, eval_kernel, invert_to_mixing, sample_mixture, DerivativeValue, GridFunction,
    InversionInputs, KMonotoneMixture, MixingMeasure, Sample,
};
pub use support::{FitMethod, FitOptions, FitResult};
