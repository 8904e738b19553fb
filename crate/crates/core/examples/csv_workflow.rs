//! Writes a simulated trial to CSV, validates it, reads it back and emits
//! the group-means table the `means` command produces.
//!
//! ```text
//! cargo run --release --example csv_workflow -- [output directory]
//! ```

use glmm_gm::cli::{read_dataset, write_dataset, ColumnMapping, MeansReport, OutputFormat, ValidateReport};
use glmm_gm::sim::{generate_dataset, Baseline, ControlType, SimDesign};
use glmm_gm::{fit, FitConfig, ModelSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map_or_else(std::env::temp_dir, Into::into);
    let path = dir.join("glmm_gm_trial.csv");

    let design = SimDesign::negbin(Baseline::Bernoulli, ControlType::Time);
    write_dataset(&path, &generate_dataset(&design, 0)?)?;
    println!("wrote {}", path.display());

    // Same as: glmm-gm means --input <path> --family negbin --covariates X,U,t --group-by U,t --format csv
    let mapping = ColumnMapping::new(&["X", "U", "t"], &["U", "t"]);
    let data = read_dataset(&path, &mapping)?;
    let spec = ModelSpec::new(design.family, data.p());
    let check = ValidateReport::new(&data, &spec);
    println!("valid {}, {} subjects, {} observations", check.valid, check.n_subjects, check.n_obs);

    let fitted = fit(&data, &spec, &FitConfig::default())?;
    let report = MeansReport::new(&fitted, 0.05)?;
    report.write(OutputFormat::Csv, &mut std::io::stdout().lock())?;
    Ok(())
}
