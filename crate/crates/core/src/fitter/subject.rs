//! Per-subject work: the conditional mode of the random intercept and the
//! adaptive Gauss–Hermite evaluation of the subject's marginal likelihood
//! contribution together with its score.
//!
//! With `l(u)` the subject's conditional log-likelihood at intercept `u`,
//! the contribution is `log ∫ exp(l(u)) φ(u; σ²) du`. Its derivatives are
//! posterior expectations:
//!
//! * `∂/∂β  = E[ Σ_j l_j'(u) x_j | y ]`
//! * `∂/∂σ² = ½ E[ l''(u) + l'(u)² | y ]` (φ solves the heat equation in σ²)
//! * `∂/∂κ  = E[ Σ_j ∂l_j/∂κ | y ]`
//!
//! which stay well defined as σ² → 0, where the posterior collapses onto 0.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::ResponseModel;
use crate::quadrature::GHRule;

/// How a conditional mode was located.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeMethod {
    Newton,
    Bisection,
    /// σ² = 0: the mode is 0 by definition.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalMode {
    pub mode: f64,
    /// `J'W̃J + 1/σ²` at the mode (infinite when σ² = 0).
    pub curvature: f64,
    /// `−∂²/∂b² [l(b) − b²/(2σ²)]` at the mode; equals `curvature` for the
    /// logistic family.
    pub observed_curvature: f64,
    pub method: ModeMethod,
    pub iterations: usize,
}

/// Borrowed view of one subject with its fixed-effect offsets `x_ij'β`.
#[derive(Debug, Clone, Copy)]
pub struct SubjectData<'a> {
    pub y: &'a [f64],
    pub weights: &'a [f64],
    pub offsets: &'a [f64],
}

impl SubjectData<'_> {
    fn loglik(&self, model: &impl ResponseModel, u: f64) -> f64 {
        self.y
            .iter()
            .zip(self.offsets)
            .zip(self.weights)
            .map(|((&y, &o), &w)| model.log_density(y, o + u, w))
            .sum()
    }

    /// `(l'(u), l''(u))` summed over the subject's rows.
    fn derivatives(&self, model: &impl ResponseModel, u: f64) -> (f64, f64) {
        self.y
            .iter()
            .zip(self.offsets)
            .zip(self.weights)
            .fold((0.0, 0.0), |(a, b), ((&y, &o), &w)| {
                let (d1, d2) = model.eta_derivatives(y, o + u, w);
                (a + d1, b + d2)
            })
    }

    fn working_weight_sum(&self, model: &impl ResponseModel, u: f64) -> f64 {
        self.offsets
            .iter()
            .zip(self.weights)
            .map(|(&o, &w)| model.working_weight(o + u, w))
            .sum()
    }
}

const MAX_NEWTON: usize = 50;

/// Maximizer of `l(b) − b²/(2σ²)`.
///
/// Safeguarded Newton (step halving on the objective) from `b = 0`; if that
/// has not met `tol` on the gradient after 50 steps, bisection on the
/// gradient over an expanding bracket.
pub fn find_mode(model: &impl ResponseModel, subject: SubjectData<'_>, sigma2: f64, tol: f64) -> Result<ConditionalMode> {
    if !(sigma2 >= 0.0) {
        return Err(Error::InvalidParameter(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    if sigma2 == 0.0 {
        let (_, d2) = subject.derivatives(model, 0.0);
        return Ok(ConditionalMode {
            mode: 0.0,
            curvature: f64::INFINITY,
            observed_curvature: f64::INFINITY.max(-d2),
            method: ModeMethod::Degenerate,
            iterations: 0,
        });
    }
    let prec = 1.0 / sigma2;
    let objective = |u: f64| subject.loglik(model, u) - 0.5 * prec * u * u;
    let gradient = |u: f64| {
        let (d1, d2) = subject.derivatives(model, u);
        (d1 - prec * u, d2 - prec)
    };

    let mut u = 0.0;
    let mut value = objective(u);
    let mut method = ModeMethod::Newton;
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..MAX_NEWTON {
        iterations = it + 1;
        let (g, h) = gradient(u);
        if !g.is_finite() || !h.is_finite() {
            return Err(Error::NonFinite(format!("conditional-mode gradient at b = {u}")));
        }
        if g.abs() <= tol {
            converged = true;
            break;
        }
        let mut step = if h < 0.0 { -g / h } else { g.signum() * sigma2.sqrt() };
        let mut accepted = false;
        for _ in 0..60 {
            let cand = u + step;
            let v = objective(cand);
            // The gradient test guards against rounding noise in the objective.
            if v.is_finite() && (v >= value || gradient(cand).0.abs() < g.abs()) {
                u = cand;
                value = v;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || step.abs() <= 1e-16 * (1.0 + u.abs()) {
            converged = gradient(u).0.abs() <= tol;
            break;
        }
    }

    if !converged {
        method = ModeMethod::Bisection;
        u = bisect_gradient(|b| gradient(b).0, sigma2, tol)?;
    }

    let (_, h) = gradient(u);
    Ok(ConditionalMode {
        mode: u,
        curvature: subject.working_weight_sum(model, u) + prec,
        observed_curvature: -h,
        method,
        iterations,
    })
}

fn bisect_gradient(g: impl Fn(f64) -> f64, sigma2: f64, tol: f64) -> Result<f64> {
    // The objective is concave for the supported families, so its gradient is
    // decreasing and a sign change brackets the mode.
    let mut width = sigma2.sqrt().max(1.0);
    let (mut lo, mut hi) = (-width, width);
    for _ in 0..200 {
        if g(lo) > 0.0 && g(hi) < 0.0 {
            break;
        }
        width *= 2.0;
        lo = -width;
        hi = width;
    }
    if !(g(lo) > 0.0 && g(hi) < 0.0) {
        return Err(Error::NonFinite("could not bracket the conditional mode".into()));
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm.abs() <= tol || hi - lo <= 1e-15 * (1.0 + mid.abs()) {
            return Ok(mid);
        }
        if gm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Gauss–Hermite nodes with `ln w_k + x_k²` precomputed for the adaptive rule.
#[derive(Debug, Clone)]
pub struct AdaptiveRule {
    nodes: Vec<f64>,
    log_scaled_weights: Vec<f64>,
}

impl AdaptiveRule {
    pub fn new(rule: &GHRule) -> Self {
        Self {
            nodes: rule.nodes().to_vec(),
            log_scaled_weights: rule.iter().map(|(x, w)| w.ln() + x * x).collect(),
        }
    }
}

/// What [`integrate_subject`] should compute beyond the log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Want {
    LogLik,
    Score,
}

#[derive(Debug, Clone)]
pub struct SubjectContribution {
    pub loglik: f64,
    /// `∂/∂β` (length p), empty unless a score was requested.
    pub score_beta: Vec<f64>,
    pub score_sigma2: f64,
    pub score_kappa: f64,
    pub mode: ConditionalMode,
}

/// Log marginal-likelihood contribution of one subject (and optionally its
/// score), by adaptive Gauss–Hermite centred at the conditional mode and
/// scaled by the observed curvature there.
pub fn integrate_subject(
    model: &impl ResponseModel,
    subject: SubjectData<'_>,
    rows: &[&[f64]],
    sigma2: f64,
    rule: &AdaptiveRule,
    mode_tol: f64,
    want: Want,
) -> Result<SubjectContribution> {
    let mode = find_mode(model, subject, sigma2, mode_tol)?;
    let p = rows.first().map_or(0, |r| r.len());

    // Score integrand at one value of the intercept.
    let score_at = |u: f64, beta: &mut [f64]| -> (f64, f64, f64) {
        let (mut d1_sum, mut d2_sum, mut dk_sum) = (0.0, 0.0, 0.0);
        for (j, row) in rows.iter().enumerate() {
            let eta = subject.offsets[j] + u;
            let (d1, d2) = model.eta_derivatives(subject.y[j], eta, subject.weights[j]);
            d1_sum += d1;
            d2_sum += d2;
            dk_sum += model.kappa_derivative(subject.y[j], eta, subject.weights[j]);
            for (b, x) in beta.iter_mut().zip(row.iter()) {
                *b += d1 * x;
            }
        }
        (d1_sum, d2_sum, dk_sum)
    };

    if sigma2 == 0.0 {
        let loglik = subject.loglik(model, 0.0);
        let mut score_beta = Vec::new();
        let (mut score_sigma2, mut score_kappa) = (0.0, 0.0);
        if want == Want::Score {
            score_beta = vec![0.0; p];
            let (d1, d2, dk) = score_at(0.0, &mut score_beta);
            score_sigma2 = 0.5 * (d2 + d1 * d1);
            score_kappa = dk;
        }
        return finite(SubjectContribution { loglik, score_beta, score_sigma2, score_kappa, mode });
    }

    let prec = 1.0 / sigma2;
    let scale = std::f64::consts::SQRT_2 / mode.observed_curvature.sqrt();
    let mut log_terms = Vec::with_capacity(rule.nodes.len());
    let mut points = Vec::with_capacity(rule.nodes.len());
    for (&x, &lw) in rule.nodes.iter().zip(&rule.log_scaled_weights) {
        let u = mode.mode + scale * x;
        let h = subject.loglik(model, u) - 0.5 * prec * u * u;
        log_terms.push(lw + h);
        points.push(u);
    }
    let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("subject integrand vanished at every node".into()));
    }
    let mut total = 0.0;
    for t in log_terms.iter_mut() {
        *t = (*t - max).exp();
        total += *t;
    }
    let loglik = scale.ln() - 0.5 * (2.0 * PI * sigma2).ln() + max + total.ln();

    let mut score_beta = Vec::new();
    let (mut score_sigma2, mut score_kappa) = (0.0, 0.0);
    if want == Want::Score {
        score_beta = vec![0.0; p];
        let mut node_beta = vec![0.0; p];
        for (&u, &t) in points.iter().zip(&log_terms) {
            let omega = t / total;
            if omega == 0.0 {
                continue;
            }
            node_beta.iter_mut().for_each(|b| *b = 0.0);
            let (d1, d2, dk) = score_at(u, &mut node_beta);
            for (s, b) in score_beta.iter_mut().zip(&node_beta) {
                *s += omega * b;
            }
            score_sigma2 += omega * 0.5 * (d2 + d1 * d1);
            score_kappa += omega * dk;
        }
    }
    finite(SubjectContribution { loglik, score_beta, score_sigma2, score_kappa, mode })
}

fn finite(c: SubjectContribution) -> Result<SubjectContribution> {
    let ok = c.loglik.is_finite()
        && c.score_sigma2.is_finite()
        && c.score_kappa.is_finite()
        && c.score_beta.iter().all(|v| v.is_finite());
    if ok {
        Ok(c)
    } else {
        Err(Error::NonFinite("subject likelihood contribution".into()))
    }
}

/// Posterior mean `E(b | y)` by adaptive quadrature; the exact counterpart of
/// the conditional mode.
pub fn posterior_mean(
    model: &impl ResponseModel,
    subject: SubjectData<'_>,
    sigma2: f64,
    rule: &AdaptiveRule,
    mode_tol: f64,
) -> Result<f64> {
    if sigma2 == 0.0 {
        return Ok(0.0);
    }
    let mode = find_mode(model, subject, sigma2, mode_tol)?;
    let prec = 1.0 / sigma2;
    let scale = std::f64::consts::SQRT_2 / mode.observed_curvature.sqrt();
    let terms: Vec<(f64, f64)> = rule
        .nodes
        .iter()
        .zip(&rule.log_scaled_weights)
        .map(|(&x, &lw)| {
            let u = mode.mode + scale * x;
            (u, lw + subject.loglik(model, u) - 0.5 * prec * u * u)
        })
        .collect();
    let max = terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (u, t) in terms {
        let w = (t - max).exp();
        num += w * u;
        den += w;
    }
    Ok(num / den)
}
