//! Structural checks run before fitting: here a covariate that duplicates
//! the treatment column makes the design rank deficient.
//!
//! ```text
//! cargo run --example validate_dataset
//! ```

use glmm_gm::cli::{read_dataset_from, ColumnMapping, ValidateReport};
use glmm_gm::{Family, ModelSpec};

const CSV: &str = "\
subject_id,y,U,arm
a,1,1,1
a,0,1,1
b,0,0,0
c,1,1,1
d,0,0,0
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = read_dataset_from(CSV.as_bytes(), &ColumnMapping::new(&["U", "arm"], &["U"]))?;
    let report = ValidateReport::new(&data, &ModelSpec::new(Family::Logistic, data.p()));
    println!("valid: {}", report.valid);
    for v in &report.violations {
        println!("  {:?}: {}", v.kind, v.message);
    }
    Ok(())
}
