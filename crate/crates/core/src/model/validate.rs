use serde::{Deserialize, Serialize};

use super::{Dataset, Family, ModelSpec};

/// Singular values below `RANK_TOL × σ_max` count as zero in the rank check.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Dimension,
    EmptySubject,
    NoObservations,
    Rank,
    EmptyGroup,
    Response,
    Weight,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
}

impl Violation {
    fn new(kind: ViolationKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into(), subject: None, row: None }
    }

    fn at(mut self, subject: &str, row: usize) -> Self {
        self.subject = Some(subject.to_string());
        self.row = Some(row);
        self
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

/// Checks every dataset requirement for fitting `spec` and reports all
/// violations found rather than stopping at the first.
pub fn validate(data: &Dataset, spec: &ModelSpec) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();

    if data.p() != spec.p {
        out.push(Violation::new(
            ViolationKind::Dimension,
            format!("model expects {} covariates, dataset has {}", spec.p, data.p()),
        ));
    }
    if data.n_obs() == 0 {
        out.push(Violation::new(ViolationKind::NoObservations, "dataset has no observations"));
        return Err(out);
    }

    for s in data.subjects() {
        if s.n_obs() == 0 {
            out.push(Violation {
                subject: Some(s.id.clone()),
                ..Violation::new(ViolationKind::EmptySubject, format!("subject `{}` has no observations", s.id))
            });
        }
        for (j, &y) in s.y.iter().enumerate() {
            if !y.is_finite() || s.row(j).iter().any(|v| !v.is_finite()) {
                out.push(Violation::new(ViolationKind::NonFinite, "non-finite response or covariate").at(&s.id, j));
                continue;
            }
            let ok = match spec.family {
                Family::Logistic => y == 0.0 || y == 1.0,
                Family::NegBinomial => y >= 0.0 && y.fract() == 0.0,
            };
            if !ok {
                let need = match spec.family {
                    Family::Logistic => "0 or 1",
                    Family::NegBinomial => "a nonnegative integer",
                };
                out.push(Violation::new(ViolationKind::Response, format!("response {y} must be {need}")).at(&s.id, j));
            }
            let w = s.weights[j];
            if !(w > 0.0 && w.is_finite()) {
                out.push(Violation::new(ViolationKind::Weight, format!("weight {w} must be positive")).at(&s.id, j));
            }
        }
    }

    let groups = data.group_index();
    for g in 0..groups.n_groups() {
        if groups.size(g) == 0 {
            out.push(Violation::new(
                ViolationKind::EmptyGroup,
                format!("group `{}` has no observations", groups.labels()[g]),
            ));
        }
    }

    if data.p() > 0 && !out.iter().any(|v| v.kind == ViolationKind::NonFinite) {
        let rank = numerical_rank(data);
        if rank < data.p() {
            out.push(Violation::new(
                ViolationKind::Rank,
                format!("design matrix has rank {rank} < {} columns", data.p()),
            ));
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

fn numerical_rank(data: &Dataset) -> usize {
    let x = data.design_matrix();
    let sv = x.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SubjectBlock;

    fn data(rows: Vec<Vec<f64>>, y: Vec<f64>) -> Dataset {
        let n = y.len();
        let p = rows[0].len();
        let s = SubjectBlock::new("s1", y, rows, vec![0; n]).unwrap();
        Dataset::new(vec![s], vec!["all".into()], (0..p).map(|k| format!("x{k}")).collect()).unwrap()
    }

    #[test]
    fn rank_deficient_design_is_reported() {
        let d = data(vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]], vec![0.0, 1.0, 1.0]);
        let v = validate(&d, &ModelSpec::new(Family::Logistic, 2)).unwrap_err();
        assert!(v.iter().any(|v| v.kind == ViolationKind::Rank));
    }

    #[test]
    fn response_support_is_checked_per_family() {
        let d = data(vec![vec![1.0], vec![1.0]], vec![2.0, 0.5]);
        let v = validate(&d, &ModelSpec::new(Family::Logistic, 1)).unwrap_err();
        assert_eq!(v.iter().filter(|v| v.kind == ViolationKind::Response).count(), 2);
        let v = validate(&d, &ModelSpec::new(Family::NegBinomial, 1)).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].row, Some(1));
    }

    #[test]
    fn clean_dataset_passes() {
        let d = data(vec![vec![1.0, 0.0], vec![1.0, 1.0]], vec![0.0, 1.0]);
        assert!(validate(&d, &ModelSpec::new(Family::Logistic, 2)).is_ok());
    }

    #[test]
    fn every_violation_is_reported() {
        let s = SubjectBlock::with_weights("s", vec![3.0, f64::NAN], vec![vec![1.0], vec![1.0]], vec![-1.0, 1.0], vec![0, 0])
            .unwrap();
        let d = Dataset::new(vec![s], vec!["a".into(), "b".into()], vec!["x".into()]).unwrap();
        let v = validate(&d, &ModelSpec::new(Family::Logistic, 1)).unwrap_err();
        let kinds: Vec<_> = v.iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&ViolationKind::Response));
        assert!(kinds.contains(&ViolationKind::Weight));
        assert!(kinds.contains(&ViolationKind::NonFinite));
        assert!(kinds.contains(&ViolationKind::EmptyGroup));
    }
}
