//! Population-averaged group means with their confidence intervals, next to
//! the observed means and the mean at the average covariate.
//!
//! ```text
//! cargo run --release --example marginal_means -- [logistic|negbin]
//! ```

use glmm_gm::marginal::{marginal_estimate, mean_at_mean_covariate};
use glmm_gm::sim::{generate_dataset, true_group_means, Baseline, ControlType, SimDesign};
use glmm_gm::{fit, FitConfig, ModelSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let design = match std::env::args().nth(1).as_deref() {
        Some("negbin") => SimDesign::negbin(Baseline::Bernoulli, ControlType::Gender),
        _ => SimDesign::logistic(Baseline::Bernoulli, ControlType::Gender),
    };
    let data = generate_dataset(&design, 1)?;
    let fitted = fit(&data, &ModelSpec::new(design.family, data.p()), &FitConfig::default())?;
    let truth = true_group_means(&design)?;
    let index = data.group_index();

    for g in 0..index.n_groups() {
        let group = index.group(g)?;
        let est = marginal_estimate(&fitted, &group, design.alpha)?;
        println!(
            "{:6}  n={:3}  true {:.4}  Ybar {:.4}  mu* {:.4}  mu {:.4} (se {:.4})",
            group.label,
            group.size(),
            truth[g],
            group.observed_mean(&data)?,
            mean_at_mean_covariate(&fitted, &group)?,
            est.point,
            est.se()
        );
        for (label, i) in &est.intervals {
            println!("          {label:>9}: [{:.4}, {:.4}]", i.lower, i.upper);
        }
    }
    Ok(())
}
