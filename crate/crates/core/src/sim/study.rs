use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{summarize, ReplicationOutcome};
use super::{draw_sample, replication_rng, sample_targets, true_group_means, SimDesign, SimReport};
use crate::conditional::{conditional_estimate_with, predictor_at_mean_covariate, PredictionStructure};
use crate::error::{Error, Result};
use crate::fitter::{fit, FitConfig};
use crate::marginal::{marginal_estimate, mean_at_mean_covariate};
use crate::model::{Family, ModelSpec};

/// What the confidence intervals are scored against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiTarget {
    /// The marginal mean averaged over the sample's own covariates.
    #[default]
    SampleMean,
    /// The design-level marginal mean, averaged over the covariate law too.
    PopulationMean,
}

/// What the prediction intervals are scored against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiTarget {
    /// The replication's realized conditional mean.
    #[default]
    Realized,
    /// The marginal mean of the sample, i.e. the expectation of the
    /// conditional mean over the random intercepts.
    Expected,
}

pub(super) fn default_fit_config() -> FitConfig {
    // Replications already run in parallel.
    FitConfig { parallel: false, ..FitConfig::default() }
}

fn replicate(design: &SimDesign, rep: usize, population: &[f64; 4]) -> Result<ReplicationOutcome> {
    let mut rng = replication_rng(design.seed, rep as u64);
    let sample = draw_sample(design, &mut rng)?;
    let targets = sample_targets(design, &sample)?;
    let spec = ModelSpec::new(design.family, 4);
    let fitted = fit(&sample.data, &spec, &design.fit)?;
    if !fitted.converged {
        return Err(Error::NotConverged(format!("replication {rep}: {}", fitted.diagnostics.messages.join("; "))));
    }
    let structure = PredictionStructure::new(&fitted)?;
    let index = sample.data.group_index();
    let mut out = ReplicationOutcome::new(fitted.params.sigma2, fitted.diagnostics.sigma2_at_boundary);
    for g in 0..4 {
        let group = index.group(g)?;
        let mu_target = match design.ci_target {
            CiTarget::SampleMean => targets.mu[g],
            CiTarget::PopulationMean => population[g],
        };
        let lambda_target = match design.pi_target {
            PiTarget::Realized => targets.lambda[g],
            PiTarget::Expected => targets.mu[g],
        };
        let m = marginal_estimate(&fitted, &group, design.alpha)?;
        let c = conditional_estimate_with(&structure, &fitted, &group, design.alpha)?;
        let covers = |est: &crate::marginal::GroupMeanEstimate, label: &str, target: f64| {
            est.interval(label).map(|i| i.contains(target))
        };
        let cell = &mut out.groups[g];
        cell.ybar = group.observed_mean(&sample.data)?;
        cell.mu_target = mu_target;
        cell.lambda_target = lambda_target;
        cell.mu_hat = m.point;
        cell.mu_se = m.se();
        cell.mu_star = mean_at_mean_covariate(&fitted, &group)?;
        cell.lambda_hat = c.point;
        cell.lambda_se = c.se();
        cell.lambda_star = predictor_at_mean_covariate(&fitted, &group)?;
        cell.ci = [
            covers(&m, "inverse", mu_target),
            covers(&m, "direct", mu_target),
            if design.family == Family::NegBinomial { covers(&m, "lognormal", mu_target) } else { None },
        ];
        cell.pi = [covers(&c, "inverse", lambda_target), covers(&c, "direct", lambda_target)];
    }
    Ok(out)
}

fn thread_pool() -> Result<Option<rayon::ThreadPool>> {
    match std::env::var("GLMM_GM_THREADS") {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("GLMM_GM_THREADS must be a positive integer, got `{v}`")))?;
            if n == 0 {
                return Err(Error::Config("GLMM_GM_THREADS must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map(Some)
                .map_err(|e| Error::Config(e.to_string()))
        }
        Err(_) => Ok(None),
    }
}

/// Runs every replication of `design` and summarizes bias, spread and
/// interval coverage per group.
pub fn run_study(design: &SimDesign) -> Result<SimReport> {
    run_study_with_progress(design, |_| {})
}

/// As [`run_study`], calling `progress` with the replication index as each
/// one finishes (in completion order).
pub fn run_study_with_progress(design: &SimDesign, progress: impl Fn(usize) + Sync) -> Result<SimReport> {
    design.check()?;
    let population = true_group_means(design)?;
    let work = || -> Vec<std::result::Result<ReplicationOutcome, String>> {
        (0..design.replications)
            .into_par_iter()
            .map(|rep| {
                let r = replicate(design, rep, &population).map_err(|e| e.to_string());
                progress(rep);
                r
            })
            .collect()
    };
    let outcomes = match thread_pool()? {
        Some(pool) => pool.install(work),
        None => work(),
    };
    Ok(summarize(design, population, &outcomes))
}
