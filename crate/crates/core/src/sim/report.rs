use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{SimDesign, GROUP_CELLS};
use crate::error::Result;
use crate::model::Family;

#[derive(Debug, Clone, Default)]
pub(super) struct GroupOutcome {
    pub ybar: f64,
    pub mu_target: f64,
    pub lambda_target: f64,
    pub mu_hat: f64,
    pub mu_se: f64,
    pub mu_star: f64,
    pub lambda_hat: f64,
    pub lambda_se: f64,
    pub lambda_star: f64,
    /// Coverage of the inverse, direct and lognormal confidence intervals.
    pub ci: [Option<bool>; 3],
    /// Coverage of the inverse and direct prediction intervals.
    pub pi: [Option<bool>; 2],
}

#[derive(Debug, Clone)]
pub(super) struct ReplicationOutcome {
    pub groups: [GroupOutcome; 4],
    pub sigma2_hat: f64,
    pub boundary: bool,
}

impl ReplicationOutcome {
    pub fn new(sigma2_hat: f64, boundary: bool) -> Self {
        Self { groups: Default::default(), sigma2_hat, boundary }
    }
}

/// One row of the confidence-interval table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalRow {
    pub t1: u8,
    pub t2: u8,
    pub u: u8,
    pub t: u8,
    pub n: usize,
    /// Design-level marginal mean `μ_q`.
    pub mu: f64,
    /// Average of the per-replication targets.
    pub target_mean: f64,
    pub ybar_bias: f64,
    pub ybar_sd: f64,
    pub mu_star_bias: f64,
    pub mu_star_sd: f64,
    pub mu_hat_bias: f64,
    pub mu_hat_sd: f64,
    /// Average estimated standard error of `μ̂_q`.
    pub mu_hat_mean_se: f64,
    /// Inverse-transformed interval.
    pub cp1: f64,
    /// Direct interval.
    pub cp2: f64,
    /// Lognormal interval (negative binomial only).
    pub cp3: Option<f64>,
}

/// One row of the prediction-interval table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalRow {
    pub t1: u8,
    pub t2: u8,
    pub u: u8,
    pub t: u8,
    pub n: usize,
    /// Average realized conditional mean `λ_q`.
    pub lambda: f64,
    pub ybar_bias: f64,
    pub ybar_sd: f64,
    pub lambda_star_bias: f64,
    pub lambda_star_sd: f64,
    pub lambda_hat_bias: f64,
    pub lambda_hat_sd: f64,
    pub lambda_hat_mean_se: f64,
    pub cp1: f64,
    pub cp2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub design: SimDesign,
    pub replications: usize,
    pub failures: usize,
    /// More than 2% of replications failed.
    pub flagged: bool,
    /// First few failure messages, in replication order.
    pub failure_messages: Vec<String>,
    pub mean_sigma2_hat: f64,
    pub boundary_fits: usize,
    pub marginal: Vec<MarginalRow>,
    pub conditional: Vec<ConditionalRow>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let ss = v.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    (m, (ss / (n - 1.0)).sqrt())
}

fn rate(flags: impl Iterator<Item = Option<bool>>) -> Option<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for f in flags.flatten() {
        total += 1;
        hit += usize::from(f);
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

pub(super) fn summarize(
    design: &SimDesign,
    population: [f64; 4],
    outcomes: &[std::result::Result<ReplicationOutcome, String>],
) -> SimReport {
    let ok: Vec<&ReplicationOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let failure_messages: Vec<String> = outcomes
        .iter()
        .enumerate()
        .filter_map(|(i, o)| o.as_ref().err().map(|e| format!("replication {i}: {e}")))
        .take(10)
        .collect();
    let failures = outcomes.len() - ok.len();
    let sizes = [design.arms.treated_t0, design.arms.treated_t1, design.arms.control_t0, design.arms.control_t1];

    let mut marginal = Vec::with_capacity(4);
    let mut conditional = Vec::with_capacity(4);
    for (g, &(u, t)) in GROUP_CELLS.iter().enumerate() {
        let col = |f: &dyn Fn(&GroupOutcome) -> f64| -> Vec<f64> { ok.iter().map(|o| f(&o.groups[g])).collect() };
        let (target_mean, _) = mean_sd(&col(&|c| c.mu_target));
        let (ybar_bias, ybar_sd) = mean_sd(&col(&|c| c.ybar - c.mu_target));
        let (mu_star_bias, mu_star_sd) = mean_sd(&col(&|c| c.mu_star - c.mu_target));
        let (mu_hat_bias, mu_hat_sd) = mean_sd(&col(&|c| c.mu_hat - c.mu_target));
        let (mu_hat_mean_se, _) = mean_sd(&col(&|c| c.mu_se));
        let ci = |k: usize| rate(ok.iter().map(|o| o.groups[g].ci[k]));
        marginal.push(MarginalRow {
            t1: design.baseline.code(),
            t2: design.control.code(),
            u,
            t,
            n: sizes[g],
            mu: population[g],
            target_mean,
            ybar_bias,
            ybar_sd,
            mu_star_bias,
            mu_star_sd,
            mu_hat_bias,
            mu_hat_sd,
            mu_hat_mean_se,
            cp1: ci(0).unwrap_or(f64::NAN),
            cp2: ci(1).unwrap_or(f64::NAN),
            cp3: if design.family == Family::NegBinomial { ci(2) } else { None },
        });

        let (lambda, _) = mean_sd(&col(&|c| c.lambda_target));
        let (ybar_bias, ybar_sd) = mean_sd(&col(&|c| c.ybar - c.lambda_target));
        let (lambda_star_bias, lambda_star_sd) = mean_sd(&col(&|c| c.lambda_star - c.lambda_target));
        let (lambda_hat_bias, lambda_hat_sd) = mean_sd(&col(&|c| c.lambda_hat - c.lambda_target));
        let (lambda_hat_mean_se, _) = mean_sd(&col(&|c| c.lambda_se));
        let pi = |k: usize| rate(ok.iter().map(|o| o.groups[g].pi[k])).unwrap_or(f64::NAN);
        conditional.push(ConditionalRow {
            t1: design.baseline.code(),
            t2: design.control.code(),
            u,
            t,
            n: sizes[g],
            lambda,
            ybar_bias,
            ybar_sd,
            lambda_star_bias,
            lambda_star_sd,
            lambda_hat_bias,
            lambda_hat_sd,
            lambda_hat_mean_se,
            cp1: pi(0),
            cp2: pi(1),
        });
    }

    let (mean_sigma2_hat, _) = mean_sd(&ok.iter().map(|o| o.sigma2_hat).collect::<Vec<_>>());
    SimReport {
        design: design.clone(),
        replications: outcomes.len(),
        failures,
        flagged: failures as f64 > 0.02 * outcomes.len() as f64,
        failure_messages,
        mean_sigma2_hat,
        boundary_fits: ok.iter().filter(|o| o.boundary).count(),
        marginal,
        conditional,
    }
}

/// Formats `x` with six significant digits.
pub(crate) fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NA".into() } else if x > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    if !(-5..=9).contains(&magnitude) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

impl SimReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Both tables in one CSV, distinguished by the `table` column.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "table", "T1", "T2", "U", "t", "n", "truth", "ybar_bias", "ybar_sd", "star_bias", "star_sd", "hat_bias",
            "hat_sd", "hat_mean_se", "CP1", "CP2", "CP3",
        ])?;
        for r in &self.marginal {
            let mut rec = vec!["marginal".to_string()];
            rec.extend([r.t1, r.t2, r.u, r.t].iter().map(|v| v.to_string()));
            rec.push(r.n.to_string());
            rec.extend(
                [r.mu, r.ybar_bias, r.ybar_sd, r.mu_star_bias, r.mu_star_sd, r.mu_hat_bias, r.mu_hat_sd, r.mu_hat_mean_se, r.cp1, r.cp2]
                    .iter()
                    .map(|&v| sig6(v)),
            );
            rec.push(r.cp3.map(sig6).unwrap_or_default());
            w.write_record(&rec)?;
        }
        for r in &self.conditional {
            let mut rec = vec!["conditional".to_string()];
            rec.extend([r.t1, r.t2, r.u, r.t].iter().map(|v| v.to_string()));
            rec.push(r.n.to_string());
            rec.extend(
                [
                    r.lambda,
                    r.ybar_bias,
                    r.ybar_sd,
                    r.lambda_star_bias,
                    r.lambda_star_sd,
                    r.lambda_hat_bias,
                    r.lambda_hat_sd,
                    r.lambda_hat_mean_se,
                    r.cp1,
                    r.cp2,
                ]
                .iter()
                .map(|&v| sig6(v)),
            );
            rec.push(String::new());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Human-readable table in the style of the published coverage tables.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let cp3 = self.design.family == Family::NegBinomial;
        s.push_str(&format!(
            "{} design, T1={} T2={}, {} replications ({} failed)\n",
            self.design.family,
            self.design.baseline.code(),
            self.design.control.code(),
            self.replications,
            self.failures
        ));
        s.push_str("confidence intervals for the marginal mean\n");
        s.push_str("  U t      mu    Ybar-mu (sd)       mu*-mu (sd)        muhat-mu (sd)      CP1    CP2");
        s.push_str(if cp3 { "    CP3\n" } else { "\n" });
        for r in &self.marginal {
            s.push_str(&format!(
                "  {} {}  {:6.3}  {:+.4} ({:.4})  {:+.4} ({:.4})  {:+.4} ({:.4})  {:.3}  {:.3}",
                r.u, r.t, r.mu, r.ybar_bias, r.ybar_sd, r.mu_star_bias, r.mu_star_sd, r.mu_hat_bias, r.mu_hat_sd, r.cp1, r.cp2
            ));
            if let Some(c) = r.cp3 {
                s.push_str(&format!("  {c:.3}"));
            }
            s.push('\n');
        }
        s.push_str("prediction intervals for the conditional mean\n");
        s.push_str("  U t  lambda    Ybar-l (sd)        l*-l (sd)          lhat-l (sd)        CP1    CP2\n");
        for r in &self.conditional {
            s.push_str(&format!(
                "  {} {}  {:6.3}  {:+.4} ({:.4})  {:+.4} ({:.4})  {:+.4} ({:.4})  {:.3}  {:.3}\n",
                r.u,
                r.t,
                r.lambda,
                r.ybar_bias,
                r.ybar_sd,
                r.lambda_star_bias,
                r.lambda_star_sd,
                r.lambda_hat_bias,
                r.lambda_hat_sd,
                r.cp1,
                r.cp2
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.530064176), "0.530064");
        assert_eq!(sig6(1665.27735), "1665.28");
        assert_eq!(sig6(-0.0123456789), "-0.0123457");
        assert_eq!(sig6(2.0), "2");
        assert_eq!(sig6(1.5e-9), "1.50000e-9");
        assert_eq!(sig6(f64::NAN), "NA");
    }

    #[test]
    fn rates_ignore_missing_flags() {
        assert_eq!(rate([Some(true), None, Some(false)].into_iter()), Some(0.5));
        assert_eq!(rate([None, None].into_iter()), None);
    }
}
