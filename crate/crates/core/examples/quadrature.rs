//! Gauss–Hermite expectations over a normal random intercept, and the
//! closed-form logistic-normal approximation they are compared against.
//!
//! ```text
//! cargo run --example quadrature
//! ```

use glmm_gm::quadrature::{expect_over_normal, gh_rule, logistic_normal_integral, zeger_mean, DEFAULT_GH_NODES};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rule = gh_rule(DEFAULT_GH_NODES)?;

    // E[exp(b)] for b ~ N(0, s2) is exp(s2 / 2).
    let s2 = 0.5;
    let lognormal = expect_over_normal(f64::exp, s2, &rule)?;
    println!("E[exp(b)], s2 = {s2}: quadrature {lognormal:.12}, exact {:.12}", (s2 / 2.0).exp());

    println!("\n  eta0   sigma2   quadrature    closed form   difference");
    for eta0 in [-3.0, -1.0, 0.0, 1.0, 3.0] {
        for sigma2 in [0.01, 0.25, 1.0] {
            let q = logistic_normal_integral(eta0, sigma2, &rule)?;
            let z = zeger_mean(eta0, sigma2);
            println!("{eta0:6.1} {sigma2:8.2} {q:12.8} {z:14.8} {:+12.2e}", z - q);
        }
    }
    Ok(())
}
