//! Per-observation conditional densities for the supported response families.
//!
//! Everything the fitter and the prediction code need from a family is the
//! log-density of one response given its linear predictor, the first two
//! derivatives of that log-density in the linear predictor, and the GLM
//! iterative weight. [`ResponseModel`] captures exactly that, so the
//! per-subject machinery can also be exercised with families that the public
//! API does not expose (the test suite uses a Gaussian one).

use statrs::function::gamma::{digamma, ln_gamma};

/// Conditional response distribution given the linear predictor.
pub trait ResponseModel {
    /// Log-density of one observation with prior weight `w`.
    fn log_density(&self, y: f64, eta: f64, w: f64) -> f64;

    /// First and second derivatives of [`Self::log_density`] with respect to `eta`.
    fn eta_derivatives(&self, y: f64, eta: f64, w: f64) -> (f64, f64);

    /// Iterative weight `w / (σ₀² V(μ) g'(μ)²)`.
    fn working_weight(&self, eta: f64, w: f64) -> f64;

    /// Conditional mean `g⁻¹(eta)`.
    fn mean(&self, eta: f64) -> f64;

    /// Derivative of the log-density with respect to the family's size
    /// parameter, when it has one.
    fn kappa_derivative(&self, _y: f64, _eta: f64, _w: f64) -> f64 {
        0.0
    }
}

/// The two families supported by the fitter, with their nuisance parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObsModel {
    Logistic,
    NegBinomial { kappa: f64 },
}

pub(crate) fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(x))` without overflow.
pub(crate) fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(exp(a) + exp(b))`.
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

// Small integer counts dominate in practice; the finite sums are exact there
// and much cheaper than the special functions.
const SMALL_COUNT: f64 = 64.0;

fn is_small_count(y: f64) -> bool {
    (0.0..SMALL_COUNT).contains(&y) && y.fract() == 0.0
}

/// `ln Γ(y + κ) − ln Γ(κ) − ln Γ(y + 1)`.
fn nb_log_coefficient(y: f64, kappa: f64) -> f64 {
    if is_small_count(y) {
        let mut acc = 0.0;
        for j in 0..(y as usize) {
            let j = j as f64;
            acc += (kappa + j).ln() - (j + 1.0).ln();
        }
        acc
    } else {
        ln_gamma(y + kappa) - ln_gamma(kappa) - ln_gamma(y + 1.0)
    }
}

/// `ψ(y + κ) − ψ(κ)`.
fn nb_digamma_difference(y: f64, kappa: f64) -> f64 {
    if is_small_count(y) {
        (0..(y as usize)).map(|j| 1.0 / (kappa + j as f64)).sum()
    } else {
        digamma(y + kappa) - digamma(kappa)
    }
}

impl ObsModel {
    pub fn kappa(&self) -> Option<f64> {
        match *self {
            ObsModel::Logistic => None,
            ObsModel::NegBinomial { kappa } => Some(kappa),
        }
    }
}

impl ResponseModel for ObsModel {
    fn log_density(&self, y: f64, eta: f64, w: f64) -> f64 {
        match *self {
            ObsModel::Logistic => w * (y * eta - log1p_exp(eta)),
            ObsModel::NegBinomial { kappa } => {
                let ln_kappa_plus_mu = log_add_exp(kappa.ln(), eta);
                // κ ln(κ/(κ+μ)) = −κ ln(1 + μ/κ) keeps large κ accurate.
                let size_term = if eta - kappa.ln() > 0.0 {
                    kappa * (kappa.ln() - ln_kappa_plus_mu)
                } else {
                    -kappa * (eta - kappa.ln()).exp().ln_1p()
                };
                w * (nb_log_coefficient(y, kappa) + y * (eta - ln_kappa_plus_mu) + size_term)
            }
        }
    }

    fn eta_derivatives(&self, y: f64, eta: f64, w: f64) -> (f64, f64) {
        match *self {
            ObsModel::Logistic => {
                let p = logistic(eta);
                (w * (y - p), -w * p * (1.0 - p))
            }
            ObsModel::NegBinomial { kappa } => {
                let mu = eta.exp();
                let denom = kappa + mu;
                // κμ/(κ+μ) written to stay finite as μ → ∞.
                let share = kappa / denom;
                (
                    w * share * (y - mu),
                    -w * share * (y + kappa) * (mu / denom),
                )
            }
        }
    }

    fn working_weight(&self, eta: f64, w: f64) -> f64 {
        match *self {
            ObsModel::Logistic => {
                let p = logistic(eta);
                w * p * (1.0 - p)
            }
            ObsModel::NegBinomial { kappa } => {
                let mu = eta.exp();
                w * kappa * mu / (kappa + mu)
            }
        }
    }

    fn mean(&self, eta: f64) -> f64 {
        match *self {
            ObsModel::Logistic => logistic(eta),
            ObsModel::NegBinomial { .. } => eta.exp(),
        }
    }

    fn kappa_derivative(&self, y: f64, eta: f64, w: f64) -> f64 {
        match *self {
            ObsModel::Logistic => 0.0,
            ObsModel::NegBinomial { kappa } => {
                let mu = eta.exp();
                w * (nb_digamma_difference(y, kappa) - (mu / kappa).ln_1p() + (mu - y) / (kappa + mu))
            }
        }
    }
}
