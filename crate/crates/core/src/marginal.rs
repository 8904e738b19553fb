//! Marginal (population-averaged) group means.
//!
//! The member means are `μ_i = E g⁻¹(x_i'β + b)`: for the logistic family the
//! Zeger surrogate `logistic(c x_i'β)`, for NB the exact `exp(x_i'β + σ²/2)`.
//! Their average over a group is estimated by plug-in and its variance by the
//! delta method over `(β, σ²)`; for NB the lognormal-sum form is used instead
//! of the linearization.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitter::FittedModel;
use crate::interval::{ci_direct, ci_inverse_log, ci_inverse_logit, ci_lognormal, Interval};
use crate::model::{logistic, Dataset, Family, Group, ParamVector};
use crate::quadrature::{zeger_factor, zeger_mean, ZEGER_CONSTANT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateKind {
    Marginal,
    Conditional,
}

/// A group mean with its estimated variance and labelled intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMeanEstimate {
    pub group_id: String,
    pub kind: EstimateKind,
    pub point: f64,
    pub variance: f64,
    pub intervals: BTreeMap<String, Interval>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl GroupMeanEstimate {
    pub fn se(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn interval(&self, label: &str) -> Option<&Interval> {
        self.intervals.get(label)
    }
}

fn dot(x: &[f64], beta: &DVector<f64>) -> Result<f64> {
    if x.len() != beta.len() {
        return Err(Error::DimensionMismatch { expected: beta.len(), found: x.len() });
    }
    Ok(x.iter().zip(beta.iter()).map(|(a, b)| a * b).sum())
}

/// Plug-in `μ_i` at covariate row `x` for arbitrary parameters.
pub fn member_mean(params: &ParamVector, x: &[f64]) -> Result<f64> {
    let eta = dot(x, &params.beta)?;
    Ok(match params.family() {
        Family::Logistic => zeger_mean(eta, params.sigma2),
        Family::NegBinomial => (eta + 0.5 * params.sigma2).exp(),
    })
}

/// Gradient of [`member_mean`] over `(β, σ²)`.
pub fn member_mean_gradient(params: &ParamVector, x: &[f64]) -> Result<DVector<f64>> {
    let p = params.beta.len();
    let eta = dot(x, &params.beta)?;
    let mut g = DVector::zeros(p + 1);
    match params.family() {
        Family::Logistic => {
            let c = zeger_factor(params.sigma2);
            let mu = logistic(c * eta);
            let slope = mu * (1.0 - mu);
            for k in 0..p {
                g[k] = slope * c * x[k];
            }
            g[p] = -0.5 * ZEGER_CONSTANT * c.powi(3) * eta * slope;
        }
        Family::NegBinomial => {
            let mu = (eta + 0.5 * params.sigma2).exp();
            for k in 0..p {
                g[k] = mu * x[k];
            }
            g[p] = 0.5 * mu;
        }
    }
    Ok(g)
}

/// `μ̂_i` at covariate row `x`.
pub fn mu_hat_i(fitted: &FittedModel, x: &[f64]) -> Result<f64> {
    member_mean(&fitted.params, x)
}

/// Gradient of `μ̂_i` over `(β, σ)`.
pub fn grad_mu_i(fitted: &FittedModel, x: &[f64]) -> Result<DVector<f64>> {
    let mut g = member_mean_gradient(&fitted.params, x)?;
    let p = fitted.params.beta.len();
    g[p] *= 2.0 * fitted.params.sigma();
    Ok(g)
}

fn member_rows<'a>(data: &'a Dataset, group: &'a Group) -> impl Iterator<Item = Result<&'a [f64]>> + 'a {
    group.members.iter().map(move |o| Ok(data.subject(o.subject)?.row(o.row)))
}

/// Distinct covariate rows of a group with their multiplicities.
fn distinct_rows(data: &Dataset, group: &Group) -> Result<Vec<(Vec<f64>, usize)>> {
    let mut counts: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    for row in member_rows(data, group) {
        let key = row?.iter().map(|v| v.to_bits()).collect();
        *counts.entry(key).or_insert(0) += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(k, n)| (k.into_iter().map(f64::from_bits).collect(), n))
        .collect())
}

fn nonempty(group: &Group) -> Result<()> {
    if group.members.is_empty() {
        Err(Error::EmptyGroup(group.label.clone()))
    } else {
        Ok(())
    }
}

/// `μ̂_q = (1/N_q) Σ_{i∈q} μ̂_i`.
pub fn marginal_group_mean(fitted: &FittedModel, group: &Group) -> Result<f64> {
    nonempty(group)?;
    let mut acc = 0.0;
    for row in member_rows(fitted.dataset(), group) {
        acc += mu_hat_i(fitted, row?)?;
    }
    Ok(acc / group.size() as f64)
}

/// `Σ_{i,j} exp(ν_i + ν_j + ½(Σ_ii + Σ_jj))(exp Σ_ij − 1)`: the variance of
/// `Σ_i exp(X_i)` for `X ~ N(ν, Σ)`.
pub fn lognormal_sum_variance(nu: &[f64], cov: &DMatrix<f64>) -> Result<f64> {
    let n = nu.len();
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: cov.nrows() });
    }
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (nu[i] + nu[j] + 0.5 * (cov[(i, i)] + cov[(j, j)])).exp() * cov[(i, j)].exp_m1();
        }
    }
    Ok(acc)
}

/// Variance of the plug-in group mean for arbitrary `(params, cov)` where
/// `cov` is over `(β, σ²)`. Returns the raw (possibly negative) value.
pub(crate) fn raw_group_variance(
    params: &ParamVector,
    cov: &DMatrix<f64>,
    rows: &[(Vec<f64>, usize)],
    n: usize,
) -> Result<f64> {
    let p = params.beta.len();
    if cov.nrows() != p + 1 {
        return Err(Error::DimensionMismatch { expected: p + 1, found: cov.nrows() });
    }
    let n = n as f64;
    match params.family() {
        Family::Logistic => {
            let mut g = DVector::zeros(p + 1);
            for (x, count) in rows {
                g += member_mean_gradient(params, x)? * (*count as f64);
            }
            g /= n;
            Ok((g.transpose() * cov * &g)[(0, 0)])
        }
        Family::NegBinomial => {
            // ν_i = x_i'β + σ²/2, ∇ν_i = (x_i, ½)
            let grads: Vec<DVector<f64>> = rows
                .iter()
                .map(|(x, _)| {
                    let mut v = DVector::from_column_slice(x);
                    v = v.push(0.5);
                    v
                })
                .collect();
            let nu: Vec<f64> = rows
                .iter()
                .map(|(x, _)| dot(x, &params.beta).map(|e| e + 0.5 * params.sigma2))
                .collect::<Result<_>>()?;
            let projected: Vec<DVector<f64>> = grads.iter().map(|g| cov * g).collect();
            let s_diag: Vec<f64> = grads.iter().zip(&projected).map(|(g, pg)| g.dot(pg)).collect();
            let mut acc = 0.0;
            for i in 0..rows.len() {
                for j in 0..rows.len() {
                    let s_ij = grads[i].dot(&projected[j]);
                    let w = (rows[i].1 * rows[j].1) as f64;
                    acc += w * (nu[i] + nu[j] + 0.5 * (s_diag[i] + s_diag[j])).exp() * s_ij.exp_m1();
                }
            }
            Ok(acc / (n * n))
        }
    }
}

fn clamp_variance(raw: f64, diagnostics: &mut Vec<String>) -> f64 {
    if raw < 0.0 {
        diagnostics.push(format!("negative variance {raw:e} clamped to 0"));
        0.0
    } else {
        raw
    }
}

/// Delta-method (logistic) or lognormal-sum (NB) variance of `μ̂_q`,
/// clamped at zero.
pub fn marginal_group_variance(fitted: &FittedModel, group: &Group) -> Result<f64> {
    nonempty(group)?;
    let rows = distinct_rows(fitted.dataset(), group)?;
    let raw = raw_group_variance(&fitted.params, &fitted.cov_beta_sigma2(), &rows, group.size())?;
    Ok(raw.max(0.0))
}

/// Benchmark `μ̂* = μ(x̄_q)` at the group-average covariate row.
pub fn mean_at_mean_covariate(fitted: &FittedModel, group: &Group) -> Result<f64> {
    nonempty(group)?;
    mu_hat_i(fitted, &group.mean_covariate(fitted.dataset())?)
}

/// Delta-method variance of [`mean_at_mean_covariate`].
pub fn mean_at_mean_covariate_variance(fitted: &FittedModel, group: &Group) -> Result<f64> {
    nonempty(group)?;
    let rows = vec![(group.mean_covariate(fitted.dataset())?, 1)];
    Ok(raw_group_variance(&fitted.params, &fitted.cov_beta_sigma2(), &rows, 1)?.max(0.0))
}

/// Point, variance and every applicable interval for `μ_q`: `direct` and
/// `inverse` for both families, `lognormal` for NB.
pub fn marginal_estimate(fitted: &FittedModel, group: &Group, alpha: f64) -> Result<GroupMeanEstimate> {
    nonempty(group)?;
    let point = marginal_group_mean(fitted, group)?;
    let rows = distinct_rows(fitted.dataset(), group)?;
    let mut diagnostics = Vec::new();
    let raw = raw_group_variance(&fitted.params, &fitted.cov_beta_sigma2(), &rows, group.size())?;
    let variance = clamp_variance(raw, &mut diagnostics);
    let mut intervals = BTreeMap::new();
    intervals.insert("direct".to_string(), ci_direct(point, variance, alpha)?);
    match fitted.spec.family {
        Family::Logistic => {
            intervals.insert("inverse".to_string(), ci_inverse_logit(point, variance, alpha)?);
        }
        Family::NegBinomial => {
            intervals.insert("inverse".to_string(), ci_inverse_log(point, variance, alpha)?);
            intervals.insert("lognormal".to_string(), ci_lognormal(point, variance, group.size(), alpha)?);
        }
    }
    Ok(GroupMeanEstimate {
        group_id: group.label.clone(),
        kind: EstimateKind::Marginal,
        point,
        variance,
        intervals,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{gh_rule, logistic_normal_integral};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fd_gradient(params: &ParamVector, x: &[f64]) -> DVector<f64> {
        let p = params.beta.len();
        let h = 1e-6;
        DVector::from_fn(p + 1, |k, _| {
            let shifted = |d: f64| {
                let mut q = params.clone();
                if k < p {
                    q.beta[k] += d;
                } else {
                    q.sigma2 += d;
                }
                member_mean(&q, x).unwrap()
            };
            (shifted(h) - shifted(-h)) / (2.0 * h)
        })
    }

    #[test]
    fn member_mean_examples() {
        let nb = ParamVector::negbin(vec![0.3], 0.01, 50.0);
        assert!((member_mean(&nb, &[1.0]).unwrap() - 1.356_625_003_006_224_1).abs() < 1e-12);
        let l = ParamVector::logistic(vec![0.4, -0.4], 2.0);
        assert_eq!(member_mean(&l, &[1.0, 1.0]).unwrap(), 0.5);
        let flat = ParamVector::logistic(vec![1.7], 0.0);
        assert_eq!(member_mean(&flat, &[1.0]).unwrap(), logistic(1.7));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let beta: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let x = [1.0, rng.random_range(0.0..1.0), f64::from(rng.random_range(0..2u8))];
            let s2 = rng.random_range(0.01..1.5);
            for params in [ParamVector::logistic(beta.clone(), s2), ParamVector::negbin(beta.clone(), s2, 10.0)] {
                let g = member_mean_gradient(&params, &x).unwrap();
                let fd = fd_gradient(&params, &x);
                for k in 0..g.len() {
                    assert!((g[k] - fd[k]).abs() <= 1e-5 * fd[k].abs().max(1e-3), "{k}: {} vs {}", g[k], fd[k]);
                }
            }
        }
    }

    #[test]
    fn nb_gradient_is_mean_times_covariates() {
        let params = ParamVector::negbin(vec![0.3, -0.2], 0.04, 5.0);
        let x = [1.0, 0.7];
        let g = member_mean_gradient(&params, &x).unwrap();
        let mu = member_mean(&params, &x).unwrap();
        assert!((g[0] - mu).abs() < 1e-15 && (g[1] - 0.7 * mu).abs() < 1e-15);
    }

    #[test]
    fn singleton_nb_variance_is_lognormal() {
        let params = ParamVector::negbin(vec![0.3, 0.2], 0.05, 5.0);
        let cov = DMatrix::from_row_slice(3, 3, &[0.02, 0.001, 0.0, 0.001, 0.03, 0.0, 0.0, 0.0, 0.004]);
        let x = vec![1.0, 1.0];
        let v = raw_group_variance(&params, &cov, &[(x.clone(), 1)], 1).unwrap();
        let g = DVector::from_vec(vec![1.0, 1.0, 0.5]);
        let s = (g.transpose() * &cov * &g)[(0, 0)];
        let nu = 0.5 + 0.025;
        assert!((v - (2.0 * nu + s).exp() * s.exp_m1()).abs() < 1e-15);
        let zero = raw_group_variance(&params, &DMatrix::zeros(3, 3), &[(x, 4)], 4).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn collapsed_rows_match_the_full_double_sum() {
        let params = ParamVector::negbin(vec![0.1, 0.4], 0.1, 5.0);
        let cov = DMatrix::from_row_slice(3, 3, &[0.02, 0.004, 0.001, 0.004, 0.03, 0.0, 0.001, 0.0, 0.01]);
        let rows = [vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let collapsed = raw_group_variance(&params, &cov, &[(rows[0].clone(), 2), (rows[2].clone(), 1)], 3).unwrap();
        let full = raw_group_variance(&params, &cov, &rows.iter().map(|r| (r.clone(), 1)).collect::<Vec<_>>(), 3).unwrap();
        assert!((collapsed - full).abs() < 1e-15);
        let nu: Vec<f64> = rows.iter().map(|r| dot(r, &params.beta).unwrap() + 0.05).collect();
        let grads: Vec<DVector<f64>> = rows.iter().map(|r| DVector::from_vec(vec![r[0], r[1], 0.5])).collect();
        let s = DMatrix::from_fn(3, 3, |i, j| (grads[i].transpose() * &cov * &grads[j])[(0, 0)]);
        assert!((full - lognormal_sum_variance(&nu, &s).unwrap() / 9.0).abs() < 1e-15);
    }

    #[test]
    fn zeger_mean_tends_to_quadrature_as_variance_vanishes() {
        let rule = gh_rule(25).unwrap();
        let mut last = f64::INFINITY;
        for s2 in [1.0, 0.1, 0.01, 0.001] {
            let gap = (zeger_mean(1.2, s2) - logistic_normal_integral(1.2, s2, &rule).unwrap()).abs();
            assert!(gap < last);
            last = gap;
        }
        assert!(last < 0.02 * 0.001);
    }

    proptest! {
        #[test]
        fn logistic_variance_is_nonnegative(b0 in -2.0f64..2.0, b1 in -2.0f64..2.0, s2 in 0.0f64..2.0, c in 0.0f64..0.1) {
            let params = ParamVector::logistic(vec![b0, b1], s2);
            let cov = DMatrix::from_row_slice(3, 3, &[c, 0.0, 0.0, 0.0, c, 0.0, 0.0, 0.0, c]);
            let rows = vec![(vec![1.0, 0.0], 3), (vec![1.0, 1.0], 2)];
            prop_assert!(raw_group_variance(&params, &cov, &rows, 5).unwrap() >= 0.0);
        }
    }
}
