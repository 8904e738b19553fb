//! Fits a random-intercept logistic model to one simulated repeated-measures
//! trial and prints the estimates with their standard errors.
//!
//! ```text
//! cargo run --release --example fit_logistic
//! ```

use glmm_gm::sim::{generate_dataset, Baseline, ControlType, SimDesign};
use glmm_gm::{fit, FitConfig, ModelSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let design = SimDesign::logistic(Baseline::Bernoulli, ControlType::Time);
    let data = generate_dataset(&design, 0)?;
    let spec = ModelSpec::new(design.family, data.p());
    let fitted = fit(&data, &spec, &FitConfig::default())?;

    println!("{} subjects, {} observations", data.n_subjects(), data.n_obs());
    println!("converged {} after {} iterations, log-likelihood {:.4}", fitted.converged, fitted.iterations, fitted.loglik);
    let truth = [design.beta.as_slice(), &[design.sigma * design.sigma]].concat();
    let mut estimates: Vec<f64> = fitted.params.beta.iter().copied().collect();
    estimates.push(fitted.params.sigma2);
    println!("\n{:>12} {:>10} {:>10} {:>10}", "parameter", "estimate", "se", "true");
    for (((name, est), se), t) in fitted.param_names().iter().zip(&estimates).zip(fitted.std_errors()).zip(&truth) {
        println!("{name:>12} {est:10.4} {se:10.4} {t:10.4}");
    }
    Ok(())
}
