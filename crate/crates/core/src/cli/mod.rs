//! Command-line driver: `fit`, `means`, `simulate` and `validate`.
//!
//! Options come from flags and an optional TOML file (`--config`) using the
//! same names in kebab case; flags win. Reports go to `--out` or stdout as
//! JSON (full precision) or CSV (6 significant digits). Failures print a
//! JSON error object on stderr and exit with a stable code, see
//! [`exit_code`].

mod io;
mod report;

use std::io::Write;
use std::path::PathBuf;

use clap::Parser;
use serde::{Deserialize, Serialize};

pub use io::{read_dataset, read_dataset_from, write_dataset, write_dataset_to, ColumnMapping, INTERCEPT};
pub use report::{FitReport, MeansReport, MeansRow, ParameterRow, ValidateReport};

use crate::error::{Error, Result};
use crate::fitter::FitConfig;
use crate::interval::DEFAULT_ALPHA;
use crate::model::{Family, ModelSpec};
use crate::sim::{run_study, Baseline, ControlType, SimDesign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Fit the model and report estimates, standard errors and log-likelihood.
    Fit,
    /// Fit, then report marginal and conditional group means with intervals.
    Means,
    /// Run a Monte Carlo coverage study.
    Simulate,
    /// Check the dataset against the model without fitting.
    Validate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

/// Every option, all optional so that file and flag values can be merged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Options {
    /// Input CSV with columns subject_id, y, covariates and group columns.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// logistic or negbin.
    #[arg(long)]
    pub family: Option<Family>,
    /// Comma-separated numeric covariate columns; an intercept is added.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Comma-separated columns whose level combinations form the groups.
    #[arg(long, value_delimiter = ',')]
    pub group_by: Option<Vec<String>>,
    /// Interval level is 1 - alpha.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// json (default) or csv.
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Simulation seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulation replications.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Simulation design: gender or time.
    #[arg(long)]
    pub design: Option<ControlType>,
    /// Simulation baseline covariate: bernoulli or uniform.
    #[arg(long)]
    pub baseline: Option<Baseline>,
    /// Optimizer iteration limit (default 200).
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Convergence tolerance on the relative parameter change (default 1e-8).
    #[arg(long)]
    pub param_tol: Option<f64>,
    /// Convergence tolerance on the log-likelihood change (default 1e-10).
    #[arg(long)]
    pub loglik_tol: Option<f64>,
    /// Adaptive Gauss-Hermite nodes per subject (default 25).
    #[arg(long)]
    pub gh_nodes: Option<usize>,
}

impl Options {
    /// Fills every unset option from `base`.
    pub fn or(self, base: Options) -> Options {
        Options {
            input: self.input.or(base.input),
            family: self.family.or(base.family),
            covariates: self.covariates.or(base.covariates),
            group_by: self.group_by.or(base.group_by),
            alpha: self.alpha.or(base.alpha),
            out: self.out.or(base.out),
            format: self.format.or(base.format),
            seed: self.seed.or(base.seed),
            reps: self.reps.or(base.reps),
            design: self.design.or(base.design),
            baseline: self.baseline.or(base.baseline),
            max_iter: self.max_iter.or(base.max_iter),
            param_tol: self.param_tol.or(base.param_tol),
            loglik_tol: self.loglik_tol.or(base.loglik_tol),
            gh_nodes: self.gh_nodes.or(base.gh_nodes),
        }
    }

    pub fn from_toml(text: &str) -> Result<Options> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }
}

#[derive(Debug, Parser)]
#[command(name = "glmm-gm", version, about = "Group means for random-intercept GLMMs")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// TOML file with default options; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub options: Options,
}

/// A fully resolved invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub family: Family,
    pub mapping: ColumnMapping,
    pub alpha: f64,
    pub fit: FitConfig,
    pub format: OutputFormat,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub design: ControlType,
    pub baseline: Baseline,
}

impl RunConfig {
    pub fn resolve(command: Command, options: Options) -> Result<RunConfig> {
        let data_command = command != Command::Simulate;
        if data_command && options.input.is_none() {
            return Err(Error::Config(format!("`{}` needs --input", command_name(command))));
        }
        let family = match (options.family, data_command) {
            (Some(f), _) => f,
            (None, false) => Family::Logistic,
            (None, true) => return Err(Error::Config("--family is required".into())),
        };
        let mut fit = FitConfig::default();
        if let Some(v) = options.max_iter {
            fit.max_iter = v;
        }
        if let Some(v) = options.param_tol {
            fit.param_tol = v;
        }
        if let Some(v) = options.loglik_tol {
            fit.loglik_tol = v;
        }
        if let Some(v) = options.gh_nodes {
            fit.gh_nodes = v;
        }
        fit.check()?;
        let alpha = options.alpha.unwrap_or(DEFAULT_ALPHA);
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("--alpha must lie in (0, 1), got {alpha}")));
        }
        if options.reps == Some(0) {
            return Err(Error::Config("--reps must be at least 1".into()));
        }
        Ok(RunConfig {
            command,
            input: options.input,
            family,
            mapping: ColumnMapping {
                covariates: options.covariates.unwrap_or_default(),
                group_by: options.group_by.unwrap_or_default(),
            },
            alpha,
            fit,
            format: options.format.unwrap_or_default(),
            out: options.out,
            seed: options.seed,
            reps: options.reps,
            design: options.design.unwrap_or(ControlType::Gender),
            baseline: options.baseline.unwrap_or(Baseline::Bernoulli),
        })
    }

    /// Merges the config file named by the command line, if any, under the
    /// flags.
    pub fn from_cli(cli: Cli) -> Result<RunConfig> {
        let file = match &cli.config {
            Some(path) => Options::from_toml(&std::fs::read_to_string(path).map_err(|e| io::io_at(path, e))?)?,
            None => Options::default(),
        };
        RunConfig::resolve(cli.command, cli.options.or(file))
    }

    fn spec(&self) -> ModelSpec {
        ModelSpec::new(self.family, self.mapping.covariates.len() + 1)
    }

    fn sim_design(&self) -> SimDesign {
        let mut design = match self.family {
            Family::Logistic => SimDesign::logistic(self.baseline, self.design),
            Family::NegBinomial => SimDesign::negbin(self.baseline, self.design),
        };
        if let Some(r) = self.reps {
            design.replications = r;
        }
        if let Some(s) = self.seed {
            design.seed = s;
        }
        design.alpha = self.alpha;
        design.fit = FitConfig { parallel: false, ..self.fit.clone() };
        design
    }
}

fn command_name(c: Command) -> &'static str {
    match c {
        Command::Fit => "fit",
        Command::Means => "means",
        Command::Simulate => "simulate",
        Command::Validate => "validate",
    }
}

/// Exit status for a failure: 1 for invalid input, configuration or usage,
/// 2 when the fit did not converge, 3 for I/O.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NotConverged(_) => 2,
        Error::Io(_) => 3,
        Error::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => 3,
        _ => 1,
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::InvalidParameter(_) => "invalid_parameter",
        Error::EmptyGroup(_) => "empty_group",
        Error::UnknownSubject(_) => "unknown_subject",
        Error::UnknownGroup(_) => "unknown_group",
        Error::OutOfRange(_) => "out_of_range",
        Error::NonFinite(_) => "non_finite",
        Error::Validation(_) => "validation",
        Error::Parse { .. } => "parse",
        Error::NotConverged(_) => "not_converged",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
        Error::Csv(_) => "csv",
        Error::Json(_) => "json",
    }
}

/// The machine-readable error object printed on stderr.
pub fn error_json(err: &Error) -> String {
    let mut body = serde_json::json!({
        "kind": error_kind(err),
        "message": err.to_string(),
        "exit_code": exit_code(err),
    });
    match err {
        Error::Validation(v) => body["violations"] = serde_json::to_value(v).unwrap_or_default(),
        Error::Parse { row, column, .. } => {
            body["row"] = (*row).into();
            body["column"] = column.as_str().into();
        }
        _ => {}
    }
    serde_json::json!({ "error": body }).to_string()
}

/// Runs one command, writing its report to `config.out` or stdout.
pub fn run(config: &RunConfig) -> Result<()> {
    let mut buf = Vec::new();
    render(config, &mut buf)?;
    match &config.out {
        Some(path) => std::fs::write(path, &buf).map_err(|e| io::io_at(path, e))?,
        None => std::io::stdout().lock().write_all(&buf)?,
    }
    Ok(())
}

/// Runs one command, writing its report to `out`.
pub fn render(config: &RunConfig, out: &mut impl Write) -> Result<()> {
    match config.command {
        Command::Simulate => {
            let report = run_study(&config.sim_design())?;
            match config.format {
                OutputFormat::Json => writeln!(out, "{}", report.to_json()?)?,
                OutputFormat::Csv => report.write_csv(&mut *out)?,
            }
        }
        Command::Validate => {
            let data = read_dataset(input(config)?, &config.mapping)?;
            let report = ValidateReport::new(&data, &config.spec());
            if !report.violations.is_empty() {
                return Err(Error::Validation(report.violations));
            }
            report.write(config.format, out)?;
        }
        Command::Fit => {
            let data = read_dataset(input(config)?, &config.mapping)?;
            let fitted = crate::fitter::fit(&data, &config.spec(), &config.fit)?;
            ensure_converged(&fitted)?;
            FitReport::new(&fitted).write(config.format, out)?;
        }
        Command::Means => {
            let data = read_dataset(input(config)?, &config.mapping)?;
            let fitted = crate::fitter::fit(&data, &config.spec(), &config.fit)?;
            ensure_converged(&fitted)?;
            MeansReport::new(&fitted, config.alpha)?.write(config.format, out)?;
        }
    }
    Ok(())
}

fn input(config: &RunConfig) -> Result<&PathBuf> {
    config.input.as_ref().ok_or_else(|| Error::Config("--input is required".into()))
}

fn ensure_converged(fitted: &crate::fitter::FittedModel) -> Result<()> {
    if fitted.converged {
        Ok(())
    } else {
        Err(Error::NotConverged(fitted.diagnostics.messages.join("; ")))
    }
}

/// Entry point of the `glmm-gm` binary: parses `args` (program name
/// first), runs, and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = Error::Config(e.to_string().trim().to_string());
            eprintln!("{}", error_json(&err));
            return exit_code(&err);
        }
    };
    match RunConfig::from_cli(cli).and_then(|c| run(&c)) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("{}", error_json(&err));
            exit_code(&err)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file = Options::from_toml("family = \"negbin\"\nalpha = 0.1\ngroup-by = [\"arm\"]\ngh-nodes = 30\n").unwrap();
        let flags = Options { alpha: Some(0.2), input: Some("d.csv".into()), ..Options::default() };
        let cfg = RunConfig::resolve(Command::Fit, flags.or(file)).unwrap();
        assert_eq!(cfg.family, Family::NegBinomial);
        assert_eq!(cfg.alpha, 0.2);
        assert_eq!(cfg.mapping.group_by, vec!["arm".to_string()]);
        assert_eq!(cfg.fit.gh_nodes, 30);
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        assert!(matches!(Options::from_toml("famly = \"negbin\"").unwrap_err(), Error::Config(_)));
    }

    #[test]
    fn missing_required_options() {
        let no_input = RunConfig::resolve(Command::Fit, Options { family: Some(Family::Logistic), ..Options::default() });
        assert!(no_input.is_err());
        let no_family = RunConfig::resolve(Command::Means, Options { input: Some("d.csv".into()), ..Options::default() });
        assert!(no_family.is_err());
        let bad_alpha = RunConfig::resolve(Command::Simulate, Options { alpha: Some(1.5), ..Options::default() });
        assert!(bad_alpha.is_err());
        assert!(RunConfig::resolve(Command::Simulate, Options::default()).is_ok());
    }

    #[test]
    fn exit_codes_are_stable() {
        assert_eq!(exit_code(&Error::Validation(vec![])), 1);
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::NotConverged("x".into())), 2);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), 3);
    }

    #[test]
    fn error_json_is_parseable() {
        let err = Error::Parse { row: 4, column: "y".into(), message: "bad".into() };
        let v: serde_json::Value = serde_json::from_str(&error_json(&err)).unwrap();
        assert_eq!(v["error"]["kind"], "parse");
        assert_eq!(v["error"]["row"], 4);
        assert_eq!(v["error"]["exit_code"], 1);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_with_args(["glmm-gm", "frobnicate"]), 1);
        assert_eq!(main_with_args(["glmm-gm", "fit", "--family", "poisson", "--input", "x.csv"]), 1);
        assert_eq!(main_with_args(["glmm-gm", "fit", "--family", "logistic", "--input", "/nonexistent/x.csv"]), 3);
    }
}
