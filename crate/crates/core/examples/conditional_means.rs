//! Subject-specific group means, predicted from the conditional modes, with
//! prediction intervals scored against the realized means of the draw.
//!
//! ```text
//! cargo run --release --example conditional_means -- [logistic|negbin]
//! ```

use glmm_gm::conditional::{conditional_estimate_with, predictor_at_mean_covariate, PredictionStructure};
use glmm_gm::sim::{draw_sample, replication_rng, sample_targets, Baseline, ControlType, SimDesign};
use glmm_gm::{fit, FitConfig, ModelSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let design = match std::env::args().nth(1).as_deref() {
        Some("negbin") => SimDesign::negbin(Baseline::Bernoulli, ControlType::Time),
        _ => SimDesign::logistic(Baseline::Bernoulli, ControlType::Time),
    };
    let sample = draw_sample(&design, &mut replication_rng(design.seed, 2))?;
    let realized = sample_targets(&design, &sample)?.lambda;
    let data = &sample.data;
    let fitted = fit(data, &ModelSpec::new(design.family, data.p()), &FitConfig::default())?;
    // The block-elimination factors are shared by every group.
    let structure = PredictionStructure::new(&fitted)?;
    let index = data.group_index();

    for g in 0..index.n_groups() {
        let group = index.group(g)?;
        let est = conditional_estimate_with(&structure, &fitted, &group, design.alpha)?;
        println!(
            "{:6}  n={:3}  realized {:.4}  lambda* {:.4}  lambda {:.4} (se {:.4})",
            group.label,
            group.size(),
            realized[g],
            predictor_at_mean_covariate(&fitted, &group)?,
            est.point,
            est.se()
        );
        for (label, i) in &est.intervals {
            let hit = if i.contains(realized[g]) { "covers" } else { "misses" };
            println!("          {label:>9}: [{:.4}, {:.4}] {hit}", i.lower, i.upper);
        }
    }
    Ok(())
}
