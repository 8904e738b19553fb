//! Integration over the Gaussian random intercept.
//!
//! Rules are built with Golub–Welsch (eigen-decomposition of the Jacobi
//! matrix) and then polished by Newton iteration on the three-term
//! recurrence, which brings nodes and weights to full double precision.
//! Hermite rules use the physicists' weight `exp(−x²)`, so the weights of a
//! rule sum to `√π`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::logistic;

/// Node count used for every expectation unless configured otherwise.
pub const DEFAULT_GH_NODES: usize = 25;

/// Attenuation constant in `c = (1 + 0.346 σ²)^(−1/2)`.
pub const ZEGER_CONSTANT: f64 = 0.346;

#[derive(Debug, Clone, PartialEq)]
pub struct GHRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GHRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(node, weight)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }
}

impl Default for GHRule {
    fn default() -> Self {
        gh_rule(DEFAULT_GH_NODES).expect("default node count is positive")
    }
}

fn jacobi_eigen(m: usize, off_diagonal: impl Fn(usize) -> f64) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(m, m);
    for k in 1..m {
        let b = off_diagonal(k);
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Orthonormal Hermite recurrence: returns `(p_m(x), p_{m-1}(x))`.
fn hermite_pair(m: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25);
    for k in 0..m {
        let kf = k as f64;
        let next = x * (2.0 / (kf + 1.0)).sqrt() * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// The `m`-point Gauss–Hermite rule for `∫ f(x) exp(−x²) dx`.
pub fn gh_rule(m: usize) -> Result<GHRule> {
    if m == 0 {
        return Err(Error::InvalidParameter("Gauss-Hermite rule needs at least one node".into()));
    }
    let (guess, _) = jacobi_eigen(m, |k| (k as f64 / 2.0).sqrt());
    let mut nodes = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    let scale = (2.0 * m as f64).sqrt();
    for mut x in guess {
        for _ in 0..8 {
            let (pm, pm1) = hermite_pair(m, x);
            let dx = pm / (scale * pm1);
            x -= dx;
            if dx.abs() <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        let (_, pm1) = hermite_pair(m, x);
        nodes.push(x);
        weights.push(2.0 / (scale * pm1).powi(2));
    }
    // Exact symmetry about zero.
    for k in 0..m / 2 {
        let x = 0.5 * (nodes[m - 1 - k] - nodes[k]);
        let w = 0.5 * (weights[m - 1 - k] + weights[k]);
        nodes[k] = -x;
        nodes[m - 1 - k] = x;
        weights[k] = w;
        weights[m - 1 - k] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    Ok(GHRule { nodes, weights })
}

/// Gauss–Legendre rule mapped to `[a, b]`; used to average over continuous
/// covariate distributions.
pub fn gauss_legendre(m: usize, a: f64, b: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if m == 0 {
        return Err(Error::InvalidParameter("Gauss-Legendre rule needs at least one node".into()));
    }
    let (guess, _) = jacobi_eigen(m, |k| {
        let k = k as f64;
        k / (4.0 * k * k - 1.0).sqrt()
    });
    let legendre = |x: f64| {
        let (mut prev, mut cur) = (1.0, x);
        if m == 0 {
            return (1.0, 0.0);
        }
        for k in 1..m {
            let kf = k as f64;
            let next = ((2.0 * kf + 1.0) * x * cur - kf * prev) / (kf + 1.0);
            prev = cur;
            cur = next;
        }
        (cur, prev)
    };
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut nodes = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for mut x in guess {
        let mut deriv = 1.0;
        for _ in 0..8 {
            let (pm, pm1) = if m == 1 { (x, 1.0) } else { legendre(x) };
            deriv = m as f64 * (x * pm - pm1) / (x * x - 1.0);
            let dx = pm / deriv;
            x -= dx;
            if dx.abs() <= 1e-16 {
                break;
            }
        }
        if m > 1 {
            let (pm, pm1) = legendre(x);
            deriv = m as f64 * (x * pm - pm1) / (x * x - 1.0);
        }
        nodes.push(mid + half * x);
        weights.push(half * 2.0 / ((1.0 - x * x) * deriv * deriv));
    }
    Ok((nodes, weights))
}

/// `E f(b)` for `b ~ N(0, σ²)`: `(1/√π) Σ w_k f(√(2σ²) x_k)`.
///
/// A zero variance returns `f(0)` directly.
pub fn expect_over_normal(f: impl Fn(f64) -> f64, sigma2: f64, rule: &GHRule) -> Result<f64> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidParameter(format!("variance must be >= 0, got {sigma2}")));
    }
    if sigma2 == 0.0 {
        let v = f(0.0);
        return if v.is_finite() { Ok(v) } else { Err(Error::NonFinite(format!("integrand is {v} at b = 0"))) };
    }
    let scale = (2.0 * sigma2).sqrt();
    let mut acc = 0.0;
    for (x, w) in rule.iter() {
        let b = scale * x;
        let v = f(b);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("integrand is {v} at b = {b}")));
        }
        acc += w * v;
    }
    Ok(acc / PI.sqrt())
}

/// `E logistic(η₀ + b)`, `b ~ N(0, σ²)`.
pub fn logistic_normal_integral(eta0: f64, sigma2: f64, rule: &GHRule) -> Result<f64> {
    expect_over_normal(|b| logistic(eta0 + b), sigma2, rule)
}

/// Attenuation factor `c = (1 + 0.346 σ²)^(−1/2)`.
pub fn zeger_factor(sigma2: f64) -> f64 {
    (1.0 + ZEGER_CONSTANT * sigma2).powf(-0.5)
}

/// Closed-form surrogate `logistic(c η₀)` for the logistic-normal integral.
pub fn zeger_mean(eta0: f64, sigma2: f64) -> f64 {
    logistic(zeger_factor(sigma2) * eta0)
}
