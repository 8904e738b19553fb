//! Maximum marginal-likelihood fitting of the random-intercept GLMM.
//!
//! The subject integrals are evaluated by adaptive Gauss–Hermite quadrature
//! and differentiated analytically, which gives the per-subject scores `d_i`
//! used both by the empirical Fisher scoring iterations and for the
//! covariance estimate `Σ_ψ̂ = (Σ_i d_i d_i')⁻¹`.

mod optimize;
pub mod subject;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate, Dataset, ModelSpec, ParamVector, ResponseModel, SubjectBlock};
use crate::quadrature::{gh_rule, DEFAULT_GH_NODES};
pub use subject::{ConditionalMode, ModeMethod};
use subject::{AdaptiveRule, SubjectContribution, SubjectData, Want};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Empirical Fisher scoring with a Newton polish near the optimum; BFGS
    /// takes over when the information matrix is ill-conditioned.
    FisherScoring,
    /// BFGS from the start, seeded with the inverse empirical information.
    QuasiNewtonFallback,
}

/// Predictor used for the subject random intercepts reported by a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomEffectPredictor {
    Mode,
    PosteriorMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Relative parameter-change tolerance.
    pub param_tol: f64,
    pub loglik_tol: f64,
    /// Gradient tolerance for the conditional modes.
    pub mode_tol: f64,
    pub gh_nodes: usize,
    pub optimizer: Optimizer,
    pub random_effects: RandomEffectPredictor,
    /// Evaluate subjects on the rayon pool.
    pub parallel: bool,
    /// Starting values; a GLM fit is used when absent.
    #[serde(skip)]
    pub start: Option<ParamVector>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            param_tol: 1e-8,
            loglik_tol: 1e-10,
            mode_tol: 1e-10,
            gh_nodes: DEFAULT_GH_NODES,
            optimizer: Optimizer::FisherScoring,
            random_effects: RandomEffectPredictor::Mode,
            parallel: true,
            start: None,
        }
    }
}

impl FitConfig {
    pub fn check(&self) -> Result<()> {
        for (name, v) in [("param_tol", self.param_tol), ("loglik_tol", self.loglik_tol), ("mode_tol", self.mode_tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.gh_nodes == 0 {
            return Err(Error::Config("gh_nodes must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// σ̂² was fixed at zero by the boundary constraint.
    pub sigma2_at_boundary: bool,
    /// The information matrix was singular and a pseudo-inverse was used.
    pub singular_information: bool,
    pub condition_number: f64,
    /// Norm of the total score over the parameters not held at a bound.
    pub score_norm: f64,
    pub scoring_steps: usize,
    pub newton_steps: usize,
    pub quasi_newton_steps: usize,
    /// Iterations that fell back to a finite-difference gradient because the
    /// analytic score gave no ascent.
    pub gradient_fallbacks: usize,
    /// Conditional modes that needed the bisection fallback.
    pub mode_bisections: usize,
    pub messages: Vec<String>,
}

/// Result of [`fit`].
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub params: ParamVector,
    /// `Σ_ψ̂` over `(β, σ², [κ])`.
    pub cov_psi: DMatrix<f64>,
    /// Predicted random intercepts `b̂_i`, one per subject.
    pub cond_modes: Vec<f64>,
    /// `J_i'W̃_iJ_i + 1/σ̂²` at `b̂_i` (infinite when σ̂² = 0).
    pub cond_curvatures: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub diagnostics: FitDiagnostics,
    pub config: FitConfig,
    data: Dataset,
}

impl FittedModel {
    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    /// `Σ_ψ̂` restricted to `(β, σ²)`, the block used by the interval
    /// formulas.
    pub fn cov_beta_sigma2(&self) -> DMatrix<f64> {
        let k = self.spec.p + 1;
        self.cov_psi.view((0, 0), (k, k)).into_owned()
    }

    /// Standard errors `√diag Σ_ψ̂`.
    pub fn std_errors(&self) -> Vec<f64> {
        self.cov_psi.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    /// Parameter names in the order used by `cov_psi`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.data.covariate_names().to_vec();
        names.push("sigma2".into());
        if self.params.kappa.is_some() {
            names.push("kappa".into());
        }
        names
    }
}

/// Everything computed in one pass over the subjects.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub loglik: f64,
    /// Per-subject natural-scale scores over `(β, σ², [κ])`; empty when only
    /// the log-likelihood was requested.
    pub scores: Vec<DVector<f64>>,
    pub modes: Vec<ConditionalMode>,
}

impl Evaluation {
    pub fn total_score(&self, n: usize) -> DVector<f64> {
        self.scores.iter().fold(DVector::zeros(n), |acc, d| acc + d)
    }

    /// `Σ_i d_i d_i'`.
    pub fn information(&self, n: usize) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(n, n);
        for d in &self.scores {
            h.ger(1.0, d, d, 1.0);
        }
        h
    }
}

fn subject_contribution(
    model: &impl ResponseModel,
    s: &SubjectBlock,
    params: &ParamVector,
    rule: &AdaptiveRule,
    mode_tol: f64,
    want: Want,
) -> Result<SubjectContribution> {
    let offsets = s.offsets(&params.beta);
    let rows: Vec<&[f64]> = s.rows().collect();
    let data = SubjectData { y: &s.y, weights: &s.weights, offsets: &offsets };
    subject::integrate_subject(model, data, &rows, params.sigma2, rule, mode_tol, want)
}

pub(crate) fn evaluate(
    data: &Dataset,
    params: &ParamVector,
    rule: &AdaptiveRule,
    mode_tol: f64,
    want: Want,
    parallel: bool,
) -> Result<Evaluation> {
    let model = params.obs_model();
    let run = |s: &SubjectBlock| subject_contribution(&model, s, params, rule, mode_tol, want);
    let parts: Vec<SubjectContribution> = if parallel && data.n_subjects() >= 64 {
        data.subjects().par_iter().map(run).collect::<Result<_>>()?
    } else {
        data.subjects().iter().map(run).collect::<Result<_>>()?
    };

    let n = data.p() + 1 + usize::from(params.kappa.is_some());
    let mut loglik = 0.0;
    let mut scores = Vec::new();
    let mut modes = Vec::with_capacity(parts.len());
    for c in parts {
        loglik += c.loglik;
        if want == Want::Score {
            let mut d = DVector::zeros(n);
            d.rows_mut(0, data.p()).copy_from_slice(&c.score_beta);
            d[data.p()] = c.score_sigma2;
            if params.kappa.is_some() {
                d[n - 1] = c.score_kappa;
            }
            scores.push(d);
        }
        modes.push(c.mode);
    }
    Ok(Evaluation { loglik, scores, modes })
}

fn check_inputs(data: &Dataset, spec: &ModelSpec, params: &ParamVector) -> Result<()> {
    params.check(spec)?;
    if data.p() != spec.p {
        return Err(Error::DimensionMismatch { expected: spec.p, found: data.p() });
    }
    Ok(())
}

/// Marginal log-likelihood `Σ_i log ∫ exp(l_i(β, u)) φ(u; σ²) du`, with
/// each subject integral evaluated by adaptive Gauss–Hermite.
pub fn marginal_loglik(data: &Dataset, spec: &ModelSpec, params: &ParamVector) -> Result<f64> {
    marginal_loglik_with(data, spec, params, &FitConfig::default())
}

pub fn marginal_loglik_with(data: &Dataset, spec: &ModelSpec, params: &ParamVector, config: &FitConfig) -> Result<f64> {
    check_inputs(data, spec, params)?;
    let rule = AdaptiveRule::new(&gh_rule(config.gh_nodes)?);
    Ok(evaluate(data, params, &rule, config.mode_tol, Want::LogLik, config.parallel)?.loglik)
}

/// Per-subject scores `d_i` of the marginal log-likelihood over
/// `(β, σ², [κ])`.
pub fn subject_scores(data: &Dataset, spec: &ModelSpec, params: &ParamVector) -> Result<Vec<DVector<f64>>> {
    check_inputs(data, spec, params)?;
    let config = FitConfig::default();
    let rule = AdaptiveRule::new(&gh_rule(config.gh_nodes)?);
    Ok(evaluate(data, params, &rule, config.mode_tol, Want::Score, config.parallel)?.scores)
}

/// Total score `Σ_i d_i`.
pub fn score(data: &Dataset, spec: &ModelSpec, params: &ParamVector) -> Result<DVector<f64>> {
    let n = spec.n_params();
    Ok(subject_scores(data, spec, params)?.iter().fold(DVector::zeros(n), |acc, d| acc + d))
}

/// Conditional mode of one subject's random intercept and the curvature
/// `J'W̃J + 1/σ²` there.
pub fn conditional_mode(subject: &SubjectBlock, params: &ParamVector) -> Result<(f64, f64)> {
    conditional_mode_with(subject, params, FitConfig::default().mode_tol)
}

pub fn conditional_mode_with(subject: &SubjectBlock, params: &ParamVector, mode_tol: f64) -> Result<(f64, f64)> {
    if subject.p() != params.beta.len() {
        return Err(Error::DimensionMismatch { expected: params.beta.len(), found: subject.p() });
    }
    let offsets = subject.offsets(&params.beta);
    let data = SubjectData { y: &subject.y, weights: &subject.weights, offsets: &offsets };
    let m = subject::find_mode(&params.obs_model(), data, params.sigma2, mode_tol)?;
    Ok((m.mode, m.curvature))
}

/// Fits the model by maximum marginal likelihood.
pub fn fit(data: &Dataset, spec: &ModelSpec, config: &FitConfig) -> Result<FittedModel> {
    config.check()?;
    validate(data, spec).map_err(Error::Validation)?;
    if let Some(start) = &config.start {
        start.check(spec)?;
    }
    optimize::run(data, spec, config)
}
