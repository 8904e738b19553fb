//! Monte Carlo properties of the fitter and the simulation harness.

use glmm_gm::sim::{
    generate_dataset, run_study, ArmSizes, Baseline, CiTarget, ControlType, PiTarget, SimDesign, SimReport,
};
use glmm_gm::{fit, FitConfig, ModelSpec};
use rayon::prelude::*;

fn fits(design: &SimDesign, reps: u64) -> Vec<glmm_gm::FittedModel> {
    let spec = ModelSpec::new(design.family, 4);
    let config = FitConfig { parallel: false, ..FitConfig::default() };
    (0..reps)
        .into_par_iter()
        .map(|rep| {
            let data = generate_dataset(design, rep).unwrap();
            let f = fit(&data, &spec, &config).unwrap();
            assert!(f.converged, "replication {rep}: {:?}", f.diagnostics.messages);
            f
        })
        .collect()
}

#[test]
fn logistic_coefficients_are_consistent() {
    // The logistic MLE carries an O(1/n) bias away from zero, about 0.06 on
    // the slope at the default arm sizes; four times larger arms shrink it
    // well inside the tolerance.
    let design = SimDesign::logistic(Baseline::Bernoulli, ControlType::Time).with_arms(ArmSizes::scaled(800));
    let fitted = fits(&design, 200);
    for k in 0..4 {
        let mean = fitted.iter().map(|f| f.params.beta[k]).sum::<f64>() / fitted.len() as f64;
        let sd = (fitted.iter().map(|f| (f.params.beta[k] - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
        println!("beta[{k}]: mean {mean:.4} sd {sd:.4} truth {}", design.beta[k]);
        assert!((mean - design.beta[k]).abs() <= 0.05, "beta[{k}]: mean {mean} vs {}", design.beta[k]);
    }
}

#[test]
fn negbin_intercept_variance_is_unbiased() {
    let design = SimDesign::negbin(Baseline::Bernoulli, ControlType::Time);
    let fitted = fits(&design, 200);
    let mean = fitted.iter().map(|f| f.params.sigma2).sum::<f64>() / fitted.len() as f64;
    let truth = design.sigma * design.sigma;
    assert!((mean - truth).abs() <= 0.01, "mean sigma2_hat {mean} vs {truth}");
}

#[test]
fn negbin_responses_are_overdispersed() {
    let design = SimDesign::negbin(Baseline::Bernoulli, ControlType::Gender);
    let reps = 200;
    let over = (0..reps)
        .filter(|&rep| {
            let y = generate_dataset(&design, rep).unwrap().responses();
            let n = y.len() as f64;
            let mean = y.mean();
            let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            var / mean > 1.0
        })
        .count();
    assert!(over as f64 >= 0.99 * reps as f64, "{over} of {reps} replications overdispersed");
}

fn pi_coverage(r: &SimReport) -> Vec<f64> {
    r.conditional.iter().flat_map(|c| [c.cp1, c.cp2]).collect()
}

fn ci_coverage(r: &SimReport) -> Vec<f64> {
    r.marginal.iter().flat_map(|m| [m.cp1, m.cp2]).collect()
}

#[test]
fn prediction_intervals_are_scored_against_realized_means() {
    let base = SimDesign::logistic(Baseline::Bernoulli, ControlType::Time).with_replications(100);
    let realized = run_study(&base).unwrap();
    let swapped = run_study(&SimDesign { pi_target: PiTarget::Expected, ..base.clone() }).unwrap();

    // Only the prediction-interval scoring changes.
    assert_eq!(ci_coverage(&realized), ci_coverage(&swapped));
    assert_ne!(pi_coverage(&realized), pi_coverage(&swapped));

    let population = run_study(&SimDesign { ci_target: CiTarget::PopulationMean, ..base }).unwrap();
    assert_eq!(pi_coverage(&realized), pi_coverage(&population));
    assert_ne!(ci_coverage(&realized), ci_coverage(&population));
}

#[test]
fn direct_interval_coverage_approaches_nominal_with_size() {
    let reps = 200;
    // Binomial SE of the coverage pooled over four groups.
    let se = (0.95 * 0.05 / (4.0 * reps as f64)).sqrt();
    let gaps: Vec<f64> = [50, 200, 800]
        .iter()
        .map(|&n| {
            let design = SimDesign::negbin(Baseline::Bernoulli, ControlType::Time)
                .with_arms(ArmSizes::scaled(n))
                .with_replications(reps);
            let r = run_study(&design).unwrap();
            assert_eq!(r.failures, 0);
            let pooled = r.marginal.iter().map(|m| m.cp2).sum::<f64>() / 4.0;
            println!("arm size {n}: pooled direct coverage {pooled:.4}");
            (pooled - 0.95).abs()
        })
        .collect();
    for w in gaps.windows(2) {
        assert!(w[1] <= w[0] + 2.0 * se, "coverage gap grew: {gaps:?}");
    }
    assert!(gaps[2] <= 2.5 * se, "largest design still off nominal: {gaps:?}");
}
