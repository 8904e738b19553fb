//! The command-line layer: CSV round trips, report re-ingestion,
//! deterministic output and the exit codes of the `glmm-gm` binary.

use std::path::Path;
use std::process::Command as Process;

use glmm_gm::cli::{read_dataset, render, write_dataset, ColumnMapping, Command, MeansReport, Options, RunConfig};
use glmm_gm::sim::{generate_dataset, Baseline, ControlType, SimDesign};
use glmm_gm::{fit, Family, FitConfig, ModelSpec};

fn trial_csv(dir: &Path, family: Family) -> std::path::PathBuf {
    let design = match family {
        Family::Logistic => SimDesign::logistic(Baseline::Bernoulli, ControlType::Time),
        Family::NegBinomial => SimDesign::negbin(Baseline::Bernoulli, ControlType::Time),
    };
    let path = dir.join("trial.csv");
    write_dataset(&path, &generate_dataset(&design, 2).unwrap()).unwrap();
    path
}

fn means_options(input: &Path, family: Family) -> Options {
    Options {
        input: Some(input.to_path_buf()),
        family: Some(family),
        covariates: Some(vec!["X".into(), "U".into(), "t".into()]),
        group_by: Some(vec!["U".into(), "t".into()]),
        ..Options::default()
    }
}

fn rendered(command: Command, options: Options) -> Vec<u8> {
    let config = RunConfig::resolve(command, options).unwrap();
    let mut out = Vec::new();
    render(&config, &mut out).unwrap();
    out
}

#[test]
fn written_dataset_refits_to_identical_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let design = SimDesign::negbin(Baseline::Uniform, ControlType::Time);
    let original = generate_dataset(&design, 7).unwrap();
    let path = dir.path().join("sim.csv");
    write_dataset(&path, &original).unwrap();
    let reread = read_dataset(&path, &ColumnMapping::new(&["X", "U", "t"], &["group"])).unwrap();

    assert_eq!(reread.design_matrix(), original.design_matrix());
    assert_eq!(reread.responses(), original.responses());
    let spec = ModelSpec::new(design.family, 4);
    let a = fit(&original, &spec, &FitConfig::default()).unwrap();
    let b = fit(&reread, &spec, &FitConfig::default()).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.loglik, b.loglik);
}

#[test]
fn json_means_report_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = trial_csv(dir.path(), Family::NegBinomial);
    let json = rendered(Command::Means, means_options(&path, Family::NegBinomial));
    let report: MeansReport = serde_json::from_slice(&json).unwrap();
    assert_eq!(report.groups.len(), 4);
    assert_eq!(serde_json::to_string_pretty(&report).unwrap().trim(), std::str::from_utf8(&json).unwrap().trim());

    // The report agrees with the library called directly.
    let data = read_dataset(&path, &ColumnMapping::new(&["X", "U", "t"], &["U", "t"])).unwrap();
    let fitted = fit(&data, &ModelSpec::new(Family::NegBinomial, 4), &FitConfig::default()).unwrap();
    assert_eq!(report, MeansReport::new(&fitted, 0.05).unwrap());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = trial_csv(dir.path(), Family::Logistic);
    let means = || rendered(Command::Means, means_options(&path, Family::Logistic));
    assert_eq!(means(), means());

    let sim = || {
        rendered(
            Command::Simulate,
            Options { reps: Some(5), seed: Some(11), design: Some(ControlType::Time), ..Options::default() },
        )
    };
    let first = sim();
    assert!(!first.is_empty());
    assert_eq!(first, sim());
}

fn binary(args: &[&str]) -> (i32, String, String) {
    let out = Process::new(env!("CARGO_BIN_EXE_glmm-gm")).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn binary_reports_rank_deficiency_as_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rank.csv");
    std::fs::write(&path, "subject_id,y,U,arm\na,1,1,1\na,0,1,1\nb,0,0,0\nc,1,1,1\nd,0,0,0\n").unwrap();
    let (code, _, err) =
        binary(&["validate", "--input", path.to_str().unwrap(), "--family", "logistic", "--covariates", "U,arm"]);
    assert_eq!(code, 1);
    let body: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(body["error"]["kind"], "validation");
    assert_eq!(body["error"]["violations"][0]["kind"], "rank", "{err}");
}

#[test]
fn binary_reports_missing_input_as_io_failure() {
    let (code, _, err) = binary(&["fit", "--input", "/nonexistent/trial.csv", "--family", "logistic"]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("/nonexistent/trial.csv"));
}

#[test]
fn binary_reports_iteration_limit_as_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let path = trial_csv(dir.path(), Family::Logistic);
    let (code, _, err) = binary(&[
        "fit",
        "--input",
        path.to_str().unwrap(),
        "--family",
        "logistic",
        "--covariates",
        "X,U,t",
        "--max-iter",
        "1",
    ]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("not_converged"));
}

#[test]
fn binary_runs_a_small_simulation() {
    let (code, out, err) = binary(&["simulate", "--reps", "1", "--format", "csv"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.lines().count() > 1);
}

#[test]
fn binary_rejects_unknown_flags() {
    let (code, _, err) = binary(&["fit", "--no-such-flag"]);
    assert_eq!(code, 1);
    assert!(err.contains("\"config\""));
}
