//! Monte Carlo coverage of the confidence and prediction intervals.
//!
//! ```text
//! cargo run --release --example simulate_coverage -- [logistic|negbin] [gender|time] [bernoulli|uniform] [reps]
//! ```

use std::time::Instant;

use glmm_gm::sim::{run_study, Baseline, ControlType, SimDesign};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let family = args.first().map(String::as_str).unwrap_or("logistic");
    let control: ControlType = args.get(1).map(String::as_str).unwrap_or("gender").parse()?;
    let baseline: Baseline = args.get(2).map(String::as_str).unwrap_or("bernoulli").parse()?;
    let reps: usize = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(100);

    let design = match family {
        "negbin" => SimDesign::negbin(baseline, control),
        _ => SimDesign::logistic(baseline, control),
    }
    .with_replications(reps);

    let start = Instant::now();
    let report = run_study(&design)?;
    print!("{}", report.render());
    println!(
        "mean sigma2_hat {:.4}, boundary fits {}, {:.1}s",
        report.mean_sigma2_hat,
        report.boundary_fits,
        start.elapsed().as_secs_f64()
    );
    for m in &report.failure_messages {
        println!("  {m}");
    }
    Ok(())
}
