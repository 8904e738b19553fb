//! Data model shared by the fitter, the estimators and the simulation harness.

mod dataset;
mod family;
mod validate;

pub use dataset::{Dataset, Group, GroupIndex, ObsRef, SubjectBlock};
pub use family::{ObsModel, ResponseModel};
pub(crate) use family::logistic;
pub use validate::{validate, Violation, ViolationKind, RANK_TOL};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Logistic,
    #[serde(rename = "negbin")]
    NegBinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Logit,
    Log,
}

impl Family {
    /// The canonical link; the only one supported.
    pub fn link(self) -> Link {
        match self {
            Family::Logistic => Link::Logit,
            Family::NegBinomial => Link::Log,
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Logistic => "logistic",
            Family::NegBinomial => "negbin",
        })
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logistic" | "binomial" => Ok(Family::Logistic),
            "negbin" | "nb" | "negative-binomial" => Ok(Family::NegBinomial),
            other => Err(Error::Config(format!("unknown family `{other}`"))),
        }
    }
}

/// A GLMM with canonical link and one Gaussian random intercept per subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    /// Number of fixed-effect covariates, intercept included.
    pub p: usize,
}

impl ModelSpec {
    pub fn new(family: Family, p: usize) -> Self {
        Self { family, p }
    }

    pub fn link(&self) -> Link {
        self.family.link()
    }

    /// Number of free model parameters: β, σ² and, for NB, κ.
    pub fn n_params(&self) -> usize {
        match self.family {
            Family::Logistic => self.p + 1,
            Family::NegBinomial => self.p + 2,
        }
    }
}

/// Model parameters `ψ = (β, σ², [κ])` on the natural scale.
///
/// The dispersion `σ₀²` is identically one for both families (NB
/// overdispersion is carried by `κ`), see [`ParamVector::dispersion`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub kappa: Option<f64>,
}

impl ParamVector {
    pub fn logistic(beta: impl Into<Vec<f64>>, sigma2: f64) -> Self {
        Self { beta: DVector::from_vec(beta.into()), sigma2, kappa: None }
    }

    pub fn negbin(beta: impl Into<Vec<f64>>, sigma2: f64, kappa: f64) -> Self {
        Self { beta: DVector::from_vec(beta.into()), sigma2, kappa: Some(kappa) }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn dispersion(&self) -> f64 {
        1.0
    }

    pub fn family(&self) -> Family {
        if self.kappa.is_some() {
            Family::NegBinomial
        } else {
            Family::Logistic
        }
    }

    /// Checks the parameter constraints for `spec`.
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        if self.beta.len() != spec.p {
            return Err(Error::DimensionMismatch { expected: spec.p, found: self.beta.len() });
        }
        if !(self.sigma2 >= 0.0) || !self.sigma2.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma2 must be >= 0, got {}", self.sigma2)));
        }
        match (spec.family, self.kappa) {
            (Family::Logistic, None) => Ok(()),
            (Family::NegBinomial, Some(k)) if k > 0.0 && k.is_finite() => Ok(()),
            (Family::NegBinomial, Some(k)) => Err(Error::InvalidParameter(format!("kappa must be > 0, got {k}"))),
            (Family::NegBinomial, None) => Err(Error::InvalidParameter("negative-binomial model needs kappa".into())),
            (Family::Logistic, Some(_)) => Err(Error::InvalidParameter("logistic model takes no kappa".into())),
        }
    }

    pub fn obs_model(&self) -> ObsModel {
        match self.kappa {
            Some(kappa) => ObsModel::NegBinomial { kappa },
            None => ObsModel::Logistic,
        }
    }
}

/// `x'β + b`.
pub fn linear_predictor(params: &ParamVector, x: &[f64], b: f64) -> Result<f64> {
    if x.len() != params.beta.len() {
        return Err(Error::DimensionMismatch { expected: params.beta.len(), found: x.len() });
    }
    Ok(x.iter().zip(params.beta.iter()).map(|(a, c)| a * c).sum::<f64>() + b)
}

/// `g⁻¹(η)` for the family's canonical link.
pub fn inverse_link(family: Family, eta: f64) -> f64 {
    match family {
        Family::Logistic => logistic(eta),
        Family::NegBinomial => eta.exp(),
    }
}

/// Derivative of [`inverse_link`] in `η`.
pub fn inverse_link_derivative(family: Family, eta: f64) -> f64 {
    match family {
        Family::Logistic => {
            let p = logistic(eta);
            p * (1.0 - p)
        }
        Family::NegBinomial => eta.exp(),
    }
}

/// `g(μ)`.
pub fn link(family: Family, mu: f64) -> f64 {
    match family {
        Family::Logistic => (mu / (1.0 - mu)).ln(),
        Family::NegBinomial => mu.ln(),
    }
}
