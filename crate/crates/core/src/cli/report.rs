//! Reports emitted by the command-line driver.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::OutputFormat;
use crate::conditional::{conditional_estimate_with, PredictionStructure};
use crate::error::Result;
use crate::fitter::{FitDiagnostics, FittedModel};
use crate::marginal::{marginal_estimate, mean_at_mean_covariate, mean_at_mean_covariate_variance};
use crate::model::{validate, Dataset, Family, ModelSpec, Violation};
use crate::sim::report::sig6;

fn write_json<T: Serialize>(value: &T, out: &mut impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub name: String,
    pub estimate: f64,
    /// `√diag Σ_ψ̂`.
    pub se: f64,
}

/// Output of `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub family: Family,
    pub n_subjects: usize,
    pub n_obs: usize,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub parameters: Vec<ParameterRow>,
    pub diagnostics: FitDiagnostics,
}

impl FitReport {
    pub fn new(fitted: &FittedModel) -> Self {
        let p = &fitted.params;
        let mut estimates: Vec<f64> = p.beta.iter().copied().collect();
        estimates.push(p.sigma2);
        estimates.extend(p.kappa);
        let parameters = fitted
            .param_names()
            .into_iter()
            .zip(estimates)
            .zip(fitted.std_errors())
            .map(|((name, estimate), se)| ParameterRow { name, estimate, se })
            .collect();
        Self {
            family: fitted.spec.family,
            n_subjects: fitted.dataset().n_subjects(),
            n_obs: fitted.dataset().n_obs(),
            loglik: fitted.loglik,
            converged: fitted.converged,
            iterations: fitted.iterations,
            parameters,
            diagnostics: fitted.diagnostics.clone(),
        }
    }

    /// CSV holds one row per parameter and a final `loglik` row.
    pub fn write(&self, format: OutputFormat, out: &mut impl Write) -> Result<()> {
        match format {
            OutputFormat::Json => write_json(self, out),
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_writer(&mut *out);
                w.write_record(["name", "estimate", "se"])?;
                for r in &self.parameters {
                    w.write_record([r.name.clone(), sig6(r.estimate), sig6(r.se)])?;
                }
                w.write_record(["loglik".to_string(), sig6(self.loglik), "NA".into()])?;
                w.flush()?;
                Ok(())
            }
        }
    }
}

/// One group of the `means` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeansRow {
    pub group: String,
    pub n: usize,
    #[serde(rename = "Ybar")]
    pub ybar: f64,
    pub mu_star: f64,
    pub mu_star_se: f64,
    pub lambda_hat: f64,
    pub lambda_se: f64,
    pub mu_hat: f64,
    pub mu_se: f64,
    /// Interval bounds keyed `{mu|lambda}_{label}_{lo|hi}`.
    #[serde(flatten)]
    pub bounds: BTreeMap<String, f64>,
}

pub const MEANS_COLUMNS: [&str; 9] =
    ["group", "n", "Ybar", "mu_star", "mu_star_se", "lambda_hat", "lambda_se", "mu_hat", "mu_se"];

/// Output of `means`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeansReport {
    pub family: Family,
    pub alpha: f64,
    pub loglik: f64,
    pub groups: Vec<MeansRow>,
}

impl MeansReport {
    pub fn new(fitted: &FittedModel, alpha: f64) -> Result<Self> {
        let data = fitted.dataset();
        let index = data.group_index();
        let structure = PredictionStructure::new(fitted)?;
        let mut groups = Vec::with_capacity(index.n_groups());
        for g in 0..index.n_groups() {
            let group = index.group(g)?;
            let m = marginal_estimate(fitted, &group, alpha)?;
            let c = conditional_estimate_with(&structure, fitted, &group, alpha)?;
            let mut bounds = BTreeMap::new();
            for (prefix, est) in [("mu", &m), ("lambda", &c)] {
                for (label, i) in &est.intervals {
                    bounds.insert(format!("{prefix}_{label}_lo"), i.lower);
                    bounds.insert(format!("{prefix}_{label}_hi"), i.upper);
                }
            }
            groups.push(MeansRow {
                group: group.label.clone(),
                n: group.size(),
                ybar: group.observed_mean(data)?,
                mu_star: mean_at_mean_covariate(fitted, &group)?,
                mu_star_se: mean_at_mean_covariate_variance(fitted, &group)?.sqrt(),
                lambda_hat: c.point,
                lambda_se: c.se(),
                mu_hat: m.point,
                mu_se: m.se(),
                bounds,
            });
        }
        Ok(Self { family: fitted.spec.family, alpha, loglik: fitted.loglik, groups })
    }

    /// Column names of the CSV layout.
    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = MEANS_COLUMNS.iter().map(|s| s.to_string()).collect();
        if let Some(first) = self.groups.first() {
            for stem in first.bounds.keys().filter_map(|k| k.strip_suffix("_lo")) {
                cols.push(format!("{stem}_lo"));
                cols.push(format!("{stem}_hi"));
            }
        }
        cols
    }

    pub fn write(&self, format: OutputFormat, out: &mut impl Write) -> Result<()> {
        match format {
            OutputFormat::Json => write_json(self, out),
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_writer(&mut *out);
                let cols = self.columns();
                w.write_record(&cols)?;
                for r in &self.groups {
                    let mut rec = vec![r.group.clone(), r.n.to_string()];
                    rec.extend(
                        [r.ybar, r.mu_star, r.mu_star_se, r.lambda_hat, r.lambda_se, r.mu_hat, r.mu_se].map(sig6),
                    );
                    rec.extend(cols[MEANS_COLUMNS.len()..].iter().map(|k| r.bounds.get(k).map_or("NA".into(), |&v| sig6(v))));
                    w.write_record(&rec)?;
                }
                w.flush()?;
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCount {
    pub group: String,
    pub n: usize,
}

/// Output of `validate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateReport {
    pub valid: bool,
    pub n_subjects: usize,
    pub n_obs: usize,
    pub groups: Vec<GroupCount>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
}

impl ValidateReport {
    pub fn new(data: &Dataset, spec: &ModelSpec) -> Self {
        let violations = validate(data, spec).err().unwrap_or_default();
        let index = data.group_index();
        Self {
            valid: violations.is_empty(),
            n_subjects: data.n_subjects(),
            n_obs: data.n_obs(),
            groups: (0..index.n_groups())
                .map(|g| GroupCount { group: index.labels()[g].clone(), n: index.size(g) })
                .collect(),
            violations,
        }
    }

    /// CSV holds the group sizes.
    pub fn write(&self, format: OutputFormat, out: &mut impl Write) -> Result<()> {
        match format {
            OutputFormat::Json => write_json(self, out),
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_writer(&mut *out);
                w.write_record(["group", "n"])?;
                for g in &self.groups {
                    w.write_record([g.group.clone(), g.n.to_string()])?;
                }
                w.flush()?;
                Ok(())
            }
        }
    }
}
