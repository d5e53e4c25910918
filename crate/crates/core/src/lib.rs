//! Estimation toolkit for matched case-control (1 case : m controls) data.
//!
//! The crate covers the full workflow for binary crash/injury propensity
//! analysis on matched strata:
//!
//! * [`dataset`] — CSV loading, triplet validation, descriptive group
//!   comparisons with two-sample t-tests.
//! * [`quasirandom`] — scrambled Halton sequences and draw matrices for
//!   simulated likelihood.
//! * [`mixing`] — the mixing distributions of random coefficients (normal,
//!   lognormal, triangular, uniform, Weibull) and their sign shares.
//! * [`likelihood`] — log-likelihood kernels: fixed logit, conditional
//!   (fixed-effects) logit, simulated mixed logit at the individual and
//!   stratum level, and heterogeneity-in-means variants.
//! * [`estimate`] — BFGS maximization, covariance, standard errors.
//! * [`inference`] — fit statistics (AIC, finite-sample AIC, McFadden
//!   pseudo-R², chi-square), likelihood-ratio tests, relative risks,
//!   odds-ratio intervals, distributional sign shares.
//! * [`synthlab`] — synthetic data generation with known truth and
//!   independent oracles (Gauss-Hermite quadrature, enumeration).
//! * [`report`] — plain-text / JSON / CSV renderers for the result tables.

pub mod dataset;
pub mod error;
pub mod estimate;
pub mod inference;
pub mod likelihood;
pub mod mixing;
pub mod quasirandom;
pub mod report;
pub mod special;
pub mod synthlab;

pub use dataset::{CaseControlDataset, DescriptiveRow, Observation};
pub use estimate::{EstimationResult, OptimOptions};
pub use likelihood::{Grouping, KernelKind, ModelSpec, ParameterVector};
pub use error::{Error, Result};
pub use mixing::{MixingDistribution, MixingKind};
pub use quasirandom::{DrawLevel, DrawMatrix, DrawSpace, HaltonConfig};
