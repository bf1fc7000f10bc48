//! Q-learning for dynamic treatment regimes (DTRs) with a binary outcome that
//! may be misclassified.
//!
//! The crate provides three stagewise estimators sharing one pipeline:
//!
//! * a *validation-only* estimator fit on the subsample where the true outcome
//!   is observed,
//! * a *naive* estimator that treats the error-prone surrogate outcome as true,
//! * a *corrected* maximum-likelihood estimator that combines the validation
//!   and main-study samples through a joint likelihood in the regression
//!   parameters and the misclassification rates.
//!
//! Modules mirror the pipeline: [`core`] holds domain types and the outcome
//! corruption model, [`glm`] plain logistic/least-squares fitting, [`mislik`]
//! the corrected likelihood and its optimizer, [`qlearn`] the stagewise
//! estimators and regime evaluation, and [`sim`] scenario generators with a
//! Monte Carlo harness and percentile bootstrap.
//!
//! Numeric kernels are generic over the scalar type via [`num::Scalar`]
//! (`f32` or `f64`); the crate-level alias [`Real`] (`f64`) is what the
//! simulation harness and any serious fit should use.

pub mod core;
pub mod glm;
pub(crate) mod linalg;
pub mod mislik;
pub mod num;
pub mod qlearn;
pub mod sim;

/// Default scalar type for estimation and simulation.
pub type Real = f64;

/// A trajectory with `Real` entries.
pub type Trajectory = core::Trajectory<Real>;
/// A study dataset with `Real` entries.
pub type StudyDataset = core::StudyDataset<Real>;
/// Misclassification rates with `Real` entries.
pub type MisclassRates = core::MisclassRates<Real>;
/// A fitted stage model with `Real` coefficients.
pub type StageModel = core::StageModel<Real>;
/// A Q-learning fit with `Real` coefficients.
pub type QLearnFit = qlearn::QLearnFit<Real>;
