//! Marginal and conditional group means for generalized linear mixed models
//! with one Gaussian random intercept per subject.
//!
//! The crate fits logistic and negative-binomial random-intercept models by
//! maximum marginal likelihood ([`fitter`]), estimates population-averaged
//! group means with confidence intervals ([`marginal`]) and subject-specific
//! group means with prediction intervals ([`conditional`]), and replays the
//! coverage studies that motivate those intervals ([`sim`]). The [`cli`]
//! module backs the `glmm-gm` binary.

pub mod cli;
pub mod conditional;
pub mod error;
pub mod fitter;
pub mod interval;
pub mod marginal;
pub mod model;
pub mod quadrature;
pub mod sim;

pub use error::{Error, Result};
pub use fitter::{fit, FitConfig, FittedModel};
pub use interval::Interval;
pub use marginal::{EstimateKind, GroupMeanEstimate};
pub use model::{Dataset, Family, Group, ModelSpec, ParamVector, SubjectBlock};
