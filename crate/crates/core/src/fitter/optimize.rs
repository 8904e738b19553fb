//! The fit loop.
//!
//! Iterates on `θ = (β, σ², log κ)` with box constraints `σ² ≥ 0` and
//! `log κ ≤ log KAPPA_MAX`. A coordinate sitting on a bound whose score
//! points outwards is held fixed (active set); every other coordinate moves
//! along an ascent direction chosen as:
//!
//! * empirical Fisher scoring, `(Σ d_i d_i')⁻¹ Σ d_i`, while far from the
//!   optimum;
//! * Newton on a finite-difference Hessian of the analytic score once the
//!   log-likelihood has nearly stopped improving;
//! * BFGS when the empirical information is too ill-conditioned to invert.
//!
//! Steps are halved until the log-likelihood increases.

use nalgebra::{DMatrix, DVector};

use super::subject::{self, AdaptiveRule, ModeMethod, Want};
use super::{evaluate, Evaluation, FitConfig, FitDiagnostics, FittedModel, Optimizer, RandomEffectPredictor};
use crate::error::{Error, Result};
use crate::model::{logistic, Dataset, Family, ModelSpec, ParamVector};
use crate::quadrature::gh_rule;

const KAPPA_MAX: f64 = 1e6;
const KAPPA_MIN: f64 = 1e-4;
const MAX_CONDITION: f64 = 1e12;
const NEWTON_SWITCH: f64 = 1e-3;
const MAX_HALVINGS: usize = 40;
/// Predicted gain, relative to `1 + |ll|`, below which a point where no
/// ascent step exists counts as stationary.
const STATIONARY_GAIN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Scoring,
    QuasiNewton,
}

struct Problem<'a> {
    data: &'a Dataset,
    p: usize,
    has_kappa: bool,
    rule: AdaptiveRule,
    config: &'a FitConfig,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.p + 1 + usize::from(self.has_kappa)
    }

    fn params(&self, theta: &DVector<f64>) -> ParamVector {
        ParamVector {
            beta: theta.rows(0, self.p).into_owned(),
            sigma2: theta[self.p],
            kappa: self.has_kappa.then(|| theta[self.p + 1].exp()),
        }
    }

    fn theta(&self, params: &ParamVector) -> DVector<f64> {
        let mut t = DVector::zeros(self.n());
        t.rows_mut(0, self.p).copy_from(&params.beta);
        t[self.p] = params.sigma2;
        if let Some(k) = params.kappa {
            t[self.p + 1] = k.ln();
        }
        t
    }

    fn bounds(&self, k: usize) -> (f64, f64) {
        if k == self.p {
            (0.0, f64::INFINITY)
        } else if self.has_kappa && k == self.p + 1 {
            (KAPPA_MIN.ln(), KAPPA_MAX.ln())
        } else {
            (f64::NEG_INFINITY, f64::INFINITY)
        }
    }

    fn project(&self, theta: &mut DVector<f64>) {
        for k in 0..theta.len() {
            let (lo, hi) = self.bounds(k);
            theta[k] = theta[k].clamp(lo, hi);
        }
    }

    fn evaluate(&self, theta: &DVector<f64>, want: Want) -> Result<Evaluation> {
        evaluate(self.data, &self.params(theta), &self.rule, self.config.mode_tol, want, self.config.parallel)
    }

    /// Maps natural-scale scores to `θ`.
    fn chain(&self, theta: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        let mut out = d.clone();
        if self.has_kappa {
            out[self.p + 1] *= theta[self.p + 1].exp();
        }
        out
    }

    fn free_set(&self, theta: &DVector<f64>, g: &DVector<f64>) -> Vec<usize> {
        (0..theta.len())
            .filter(|&k| {
                let (lo, hi) = self.bounds(k);
                !((theta[k] <= lo && g[k] <= 0.0) || (theta[k] >= hi && g[k] >= 0.0))
            })
            .collect()
    }
}

fn sub_vector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&k| v[k]))
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Forward-difference Hessian of the total `θ`-score over `free`, negated.
fn newton_matrix(prob: &Problem<'_>, theta: &DVector<f64>, g: &DVector<f64>, free: &[usize]) -> Result<DMatrix<f64>> {
    let m = free.len();
    let mut h = DMatrix::zeros(m, m);
    for (c, &k) in free.iter().enumerate() {
        let step = 1e-5 * theta[k].abs().max(1.0);
        let mut t = theta.clone();
        t[k] += step;
        let e = prob.evaluate(&t, Want::Score)?;
        let gk = prob.chain(&t, &e.total_score(prob.n()));
        for (r, &j) in free.iter().enumerate() {
            h[(r, c)] = -(gk[j] - g[j]) / step;
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// IRLS fit with the random intercept removed; Poisson for the NB family.
fn glm_start(data: &Dataset, family: Family) -> DVector<f64> {
    let x = data.design_matrix();
    let y = data.responses();
    let p = data.p();
    let n = y.len() as f64;
    let ybar = y.sum() / n;
    let mut beta = DVector::zeros(p);
    if p > 0 {
        let clipped = ybar.clamp(1e-3, if family == Family::Logistic { 1.0 - 1e-3 } else { f64::INFINITY });
        beta[0] = match family {
            Family::Logistic => (clipped / (1.0 - clipped)).ln(),
            Family::NegBinomial => clipped.max(1e-3).ln(),
        };
    }
    for _ in 0..25 {
        let eta = &x * &beta;
        let mut w = DVector::zeros(y.len());
        let mut z = DVector::zeros(y.len());
        for i in 0..y.len() {
            let (mu, v) = match family {
                Family::Logistic => {
                    let m = logistic(eta[i]);
                    (m, (m * (1.0 - m)).max(1e-10))
                }
                Family::NegBinomial => {
                    let m = eta[i].exp();
                    (m, m.max(1e-10))
                }
            };
            w[i] = v;
            z[i] = eta[i] + (y[i] - mu) / v;
        }
        let xtw = DMatrix::from_fn(p, y.len(), |r, c| x[(c, r)] * w[c]);
        let Some(chol) = (&xtw * &x).cholesky() else { break };
        let next = chol.solve(&(&xtw * &z));
        if next.iter().any(|v| !v.is_finite()) || next.amax() > 30.0 {
            break;
        }
        let delta = (&next - &beta).amax();
        beta = next;
        if delta < 1e-10 {
            break;
        }
    }
    beta
}

fn moment_kappa(data: &Dataset, beta: &DVector<f64>) -> f64 {
    let eta = data.design_matrix() * beta;
    let y = data.responses();
    let (mut num, mut den) = (0.0, 0.0);
    for (e, y) in eta.iter().zip(y.iter()) {
        let mu = e.exp();
        num += mu * mu;
        den += (y - mu).powi(2) - mu;
    }
    if den <= 0.0 {
        100.0
    } else {
        (num / den).clamp(0.1, 100.0)
    }
}

pub(super) fn run(data: &Dataset, spec: &ModelSpec, config: &FitConfig) -> Result<FittedModel> {
    let prob = Problem {
        data,
        p: spec.p,
        has_kappa: spec.family == Family::NegBinomial,
        rule: AdaptiveRule::new(&gh_rule(config.gh_nodes)?),
        config,
    };
    let n = prob.n();
    let start = match &config.start {
        Some(s) => s.clone(),
        None => {
            let beta = glm_start(data, spec.family);
            let kappa = prob.has_kappa.then(|| moment_kappa(data, &beta));
            ParamVector { beta, sigma2: 0.1, kappa }
        }
    };
    let mut theta = prob.theta(&start);
    prob.project(&mut theta);

    let mut diag = FitDiagnostics::default();
    let mut eval = prob.evaluate(&theta, Want::Score)?;
    let mut phase = match config.optimizer {
        Optimizer::FisherScoring => Phase::Scoring,
        Optimizer::QuasiNewtonFallback => Phase::QuasiNewton,
    };
    let mut inv_hessian: Option<DMatrix<f64>> = None;
    let mut last_free: Vec<usize> = Vec::new();
    let mut close = false;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        let g = prob.chain(&theta, &eval.total_score(n));
        let free = prob.free_set(&theta, &g);
        if free != last_free {
            inv_hessian = None;
            last_free = free.clone();
        }
        if free.is_empty() {
            converged = true;
            break;
        }
        let g_free = sub_vector(&g, &free);
        let theta_scores: Vec<DVector<f64>> = eval.scores.iter().map(|d| sub_vector(&prob.chain(&theta, d), &free)).collect();
        let bhhh = theta_scores.iter().fold(DMatrix::zeros(free.len(), free.len()), |mut acc, d| {
            acc.ger(1.0, d, d, 1.0);
            acc
        });

        let mut direction = None;
        if close {
            let neg_h = newton_matrix(&prob, &theta, &g, &free)?;
            if let Some(ch) = neg_h.cholesky() {
                direction = Some(ch.solve(&g_free));
                diag.newton_steps += 1;
            }
        }
        if direction.is_none() && phase == Phase::Scoring {
            if condition_number(&bhhh) > MAX_CONDITION {
                phase = Phase::QuasiNewton;
                diag.messages.push(format!("information matrix ill-conditioned at iteration {iterations}; switched to BFGS"));
            } else if let Some(ch) = bhhh.clone().cholesky() {
                direction = Some(ch.solve(&g_free));
                diag.scoring_steps += 1;
            } else {
                phase = Phase::QuasiNewton;
            }
        }
        if direction.is_none() {
            let hinv = inv_hessian.get_or_insert_with(|| {
                let m = free.len();
                let ridge = 1e-8 * bhhh.trace().max(1e-300) / m as f64;
                (&bhhh + DMatrix::identity(m, m) * ridge)
                    .try_inverse()
                    .unwrap_or_else(|| DMatrix::identity(m, m))
            });
            direction = Some(&*hinv * &g_free);
            diag.quasi_newton_steps += 1;
        }
        let direction = direction.expect("a direction is always chosen");

        let mut accepted = line_search(&prob, &theta, &free, &direction, eval.loglik);
        if accepted.is_none() && !close {
            close = true;
            continue;
        }
        if accepted.is_none() {
            // The analytic score is a quadrature approximation of the exact
            // score; where the two disagree, climb the objective actually
            // evaluated using its finite-difference gradient.
            let g_fd = fd_gradient(&prob, &theta, &free, eval.loglik)?;
            let dir = bhhh.clone().cholesky().map(|ch| ch.solve(&g_fd)).unwrap_or_else(|| g_fd.clone());
            let predicted = g_fd.dot(&dir);
            diag.gradient_fallbacks += 1;
            if predicted <= STATIONARY_GAIN * (1.0 + eval.loglik.abs()) {
                converged = true;
                break;
            }
            accepted = line_search(&prob, &theta, &free, &dir, eval.loglik);
            if accepted.is_none() {
                diag.messages.push("line search failed".into());
                break;
            }
        }
        let next = accepted.expect("checked above");

        let next_eval = prob.evaluate(&next, Want::Score)?;
        let gain = next_eval.loglik - eval.loglik;
        let rel_step = (0..n)
            .map(|k| (next[k] - theta[k]).abs() / (1.0 + theta[k].abs()))
            .fold(0.0, f64::max);

        if let Some(hinv) = inv_hessian.as_mut() {
            let g_next = prob.chain(&next, &next_eval.total_score(n));
            let s = sub_vector(&(&next - &theta), &free);
            let y = sub_vector(&(&g - &g_next), &free);
            bfgs_update(hinv, &s, &y);
        }

        theta = next;
        eval = next_eval;
        if gain < NEWTON_SWITCH {
            close = true;
        }
        let small_gain = gain <= config.loglik_tol * (1.0 + eval.loglik.abs());
        if rel_step <= config.param_tol || (close && small_gain) {
            converged = true;
            break;
        }
    }

    if !converged {
        diag.messages.push(format!("no convergence after {iterations} iterations"));
    }
    finish(&prob, spec, theta, eval, converged, iterations, diag)
}

/// Step-halving search along `direction`, projected onto the bounds.
/// Returns the first candidate that does not decrease the log-likelihood.
fn line_search(
    prob: &Problem<'_>,
    theta: &DVector<f64>,
    free: &[usize],
    direction: &DVector<f64>,
    loglik: f64,
) -> Option<DVector<f64>> {
    let mut t = 1.0;
    for _ in 0..MAX_HALVINGS {
        let mut cand = theta.clone();
        for (c, &k) in free.iter().enumerate() {
            cand[k] += t * direction[c];
        }
        prob.project(&mut cand);
        if let Ok(e) = prob.evaluate(&cand, Want::LogLik) {
            if e.loglik.is_finite() && e.loglik >= loglik {
                return Some(cand);
            }
        }
        t *= 0.5;
    }
    None
}

/// Finite-difference gradient of the log-likelihood over `free`; central
/// where both sides are feasible, one-sided at a bound.
fn fd_gradient(prob: &Problem<'_>, theta: &DVector<f64>, free: &[usize], loglik: f64) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(free.len());
    for (c, &k) in free.iter().enumerate() {
        let h = 1e-5 * theta[k].abs().max(1.0);
        let (lo, hi) = prob.bounds(k);
        let at = |v: f64| -> Result<f64> {
            let mut t = theta.clone();
            t[k] = v;
            Ok(prob.evaluate(&t, Want::LogLik)?.loglik)
        };
        g[c] = if theta[k] - h < lo {
            (at(theta[k] + h)? - loglik) / h
        } else if theta[k] + h > hi {
            (loglik - at(theta[k] - h)?) / h
        } else {
            (at(theta[k] + h)? - at(theta[k] - h)?) / (2.0 * h)
        };
    }
    Ok(g)
}

fn bfgs_update(hinv: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let sy = s.dot(y);
    if sy <= 1e-12 * s.norm() * y.norm() {
        return;
    }
    let rho = 1.0 / sy;
    let m = s.len();
    let i = DMatrix::<f64>::identity(m, m);
    let a = &i - (s * y.transpose()) * rho;
    let b = &i - (y * s.transpose()) * rho;
    *hinv = &a * &*hinv * &b + (s * s.transpose()) * rho;
}

/// Natural-scale total score over the coordinates not held at a bound.
fn score_norm(prob: &Problem<'_>, theta: &DVector<f64>, eval: &Evaluation) -> f64 {
    let d = eval.total_score(prob.n());
    let g = prob.chain(theta, &d);
    prob.free_set(theta, &g).iter().map(|&k| d[k] * d[k]).sum::<f64>().sqrt()
}

/// Symmetric (pseudo-)inverse; the flag is set when eigenvalues had to be
/// dropped.
pub(crate) fn pseudo_inverse(h: &DMatrix<f64>) -> (DMatrix<f64>, bool, f64) {
    let n = h.nrows();
    let eig = h.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let cutoff = max * 1e-12;
    let mut singular = false;
    let mut inv = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda <= cutoff {
            singular = true;
            continue;
        }
        let v = eig.eigenvectors.column(k);
        inv.ger(1.0 / lambda, &v, &v, 1.0);
    }
    let inv = (&inv + inv.transpose()) * 0.5;
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    (inv, singular, cond)
}

fn finish(
    prob: &Problem<'_>,
    spec: &ModelSpec,
    theta: DVector<f64>,
    eval: Evaluation,
    converged: bool,
    iterations: usize,
    mut diag: FitDiagnostics,
) -> Result<FittedModel> {
    let params = prob.params(&theta);
    let n = prob.n();
    diag.score_norm = score_norm(prob, &theta, &eval);
    diag.sigma2_at_boundary = params.sigma2 == 0.0;
    if diag.sigma2_at_boundary {
        diag.messages.push("sigma2 estimated on the boundary (0)".into());
    }
    if let Some(k) = params.kappa {
        if k >= KAPPA_MAX * (1.0 - 1e-9) || k <= KAPPA_MIN * (1.0 + 1e-9) {
            diag.messages.push(format!("kappa estimated on its bound ({k:e})"));
        }
    }
    let (cov_psi, singular, cond) = pseudo_inverse(&eval.information(n));
    diag.singular_information = singular;
    diag.condition_number = cond;
    if singular {
        diag.messages.push("empirical information is singular; using a pseudo-inverse".into());
    }
    diag.mode_bisections = eval.modes.iter().filter(|m| m.method == ModeMethod::Bisection).count();

    let cond_curvatures: Vec<f64> = eval.modes.iter().map(|m| m.curvature).collect();
    let cond_modes: Vec<f64> = match prob.config.random_effects {
        RandomEffectPredictor::Mode => eval.modes.iter().map(|m| m.mode).collect(),
        RandomEffectPredictor::PosteriorMean => {
            let model = params.obs_model();
            prob.data
                .subjects()
                .iter()
                .map(|s| {
                    let offsets = s.offsets(&params.beta);
                    let d = subject::SubjectData { y: &s.y, weights: &s.weights, offsets: &offsets };
                    subject::posterior_mean(&model, d, params.sigma2, &prob.rule, prob.config.mode_tol)
                })
                .collect::<Result<_>>()?
        }
    };
    if !eval.loglik.is_finite() {
        return Err(Error::NonFinite("marginal log-likelihood at the estimate".into()));
    }

    Ok(FittedModel {
        spec: *spec,
        params,
        cov_psi,
        cond_modes,
        cond_curvatures,
        loglik: eval.loglik,
        converged,
        iterations,
        diagnostics: diag,
        config: prob.config.clone(),
        data: prob.data.clone(),
    })
}
