use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// All observations of one subject, sharing a single random intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectBlock {
    pub id: String,
    pub y: Vec<f64>,
    /// Row-major `n_i × p` covariate rows.
    x: Vec<f64>,
    p: usize,
    pub weights: Vec<f64>,
    /// Group id of each observation row.
    pub groups: Vec<usize>,
}

impl SubjectBlock {
    /// Builds a block with unit weights. Every row of `rows` must have the
    /// same length.
    pub fn new(id: impl Into<String>, y: Vec<f64>, rows: Vec<Vec<f64>>, groups: Vec<usize>) -> Result<Self> {
        let weights = vec![1.0; y.len()];
        Self::with_weights(id, y, rows, weights, groups)
    }

    pub fn with_weights(
        id: impl Into<String>,
        y: Vec<f64>,
        rows: Vec<Vec<f64>>,
        weights: Vec<f64>,
        groups: Vec<usize>,
    ) -> Result<Self> {
        let n = y.len();
        for len in [rows.len(), weights.len(), groups.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, found: len });
            }
        }
        let p = rows.first().map_or(0, Vec::len);
        let mut x = Vec::with_capacity(n * p);
        for row in &rows {
            if row.len() != p {
                return Err(Error::DimensionMismatch { expected: p, found: row.len() });
            }
            x.extend_from_slice(row);
        }
        Ok(Self { id: id.into(), y, x, p, weights, groups })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.x[j * self.p..(j + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks(self.p.max(1)).take(self.n_obs())
    }

    /// Fixed-effect part `x_ij'β` of every row.
    pub fn offsets(&self, beta: &DVector<f64>) -> Vec<f64> {
        self.rows()
            .map(|row| row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Position of one observation: its subject, its row within the subject, and
/// its index in the stacked `N`-vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObsRef {
    pub subject: usize,
    pub row: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    subjects: Vec<SubjectBlock>,
    p: usize,
    group_labels: Vec<String>,
    covariate_names: Vec<String>,
}

impl Dataset {
    /// Assembles a dataset. Structural consistency (matching covariate
    /// dimensions, group ids in range) is checked here; statistical
    /// requirements such as full rank are left to [`crate::model::validate`].
    pub fn new(subjects: Vec<SubjectBlock>, group_labels: Vec<String>, covariate_names: Vec<String>) -> Result<Self> {
        let p = covariate_names.len();
        for s in &subjects {
            if s.n_obs() > 0 && s.p() != p {
                return Err(Error::DimensionMismatch { expected: p, found: s.p() });
            }
            if let Some(&g) = s.groups.iter().find(|&&g| g >= group_labels.len()) {
                return Err(Error::UnknownGroup(g.to_string()));
            }
        }
        Ok(Self { subjects, p, group_labels, covariate_names })
    }

    pub fn subjects(&self) -> &[SubjectBlock] {
        &self.subjects
    }

    pub fn subject(&self, i: usize) -> Result<&SubjectBlock> {
        self.subjects.get(i).ok_or(Error::UnknownSubject(i))
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_obs(&self) -> usize {
        self.subjects.iter().map(SubjectBlock::n_obs).sum()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn group_labels(&self) -> &[String] {
        &self.group_labels
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Observations in stacking order (subject by subject).
    pub fn observations(&self) -> impl Iterator<Item = ObsRef> + '_ {
        let mut index = 0;
        self.subjects.iter().enumerate().flat_map(move |(subject, s)| {
            let start = index;
            index += s.n_obs();
            (0..s.n_obs()).map(move |row| ObsRef { subject, row, index: start + row })
        })
    }

    /// Stacked `N × p` fixed-effect design matrix.
    pub fn design_matrix(&self) -> DMatrix<f64> {
        let n = self.n_obs();
        let mut x = DMatrix::zeros(n, self.p);
        for obs in self.observations() {
            let row = self.subjects[obs.subject].row(obs.row);
            for (k, v) in row.iter().enumerate() {
                x[(obs.index, k)] = *v;
            }
        }
        x
    }

    pub fn responses(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_obs(), self.subjects.iter().flat_map(|s| s.y.iter().copied()))
    }

    pub fn group_index(&self) -> GroupIndex {
        let mut members = vec![Vec::new(); self.group_labels.len()];
        for obs in self.observations() {
            members[self.subjects[obs.subject].groups[obs.row]].push(obs);
        }
        GroupIndex { labels: self.group_labels.clone(), members }
    }

    /// Same data with subjects permuted; used to check order invariance.
    pub fn with_subject_order(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.subjects.len() {
            return Err(Error::DimensionMismatch { expected: self.subjects.len(), found: order.len() });
        }
        let subjects = order
            .iter()
            .map(|&i| self.subject(i).cloned())
            .collect::<Result<Vec<_>>>()?;
        Self::new(subjects, self.group_labels.clone(), self.covariate_names.clone())
    }
}

/// Observation index sets of the `Q` groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupIndex {
    labels: Vec<String>,
    members: Vec<Vec<ObsRef>>,
}

impl GroupIndex {
    pub fn n_groups(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn members(&self, group: usize) -> &[ObsRef] {
        &self.members[group]
    }

    pub fn size(&self, group: usize) -> usize {
        self.members[group].len()
    }

    pub fn find(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Builds a [`Group`] view, failing for empty groups.
    pub fn group(&self, id: usize) -> Result<Group> {
        let label = self
            .labels
            .get(id)
            .ok_or_else(|| Error::UnknownGroup(id.to_string()))?;
        if self.members[id].is_empty() {
            return Err(Error::EmptyGroup(label.clone()));
        }
        Ok(Group { label: label.clone(), members: self.members[id].clone() })
    }

    /// True if the index sets are pairwise disjoint and cover `0..n`.
    pub fn is_partition_of(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for obs in self.members.iter().flatten() {
            if obs.index >= n || seen[obs.index] {
                return false;
            }
            seen[obs.index] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

/// One group: its label and its member observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub label: String,
    pub members: Vec<ObsRef>,
}

impl Group {
    pub fn new(label: impl Into<String>, members: Vec<ObsRef>) -> Result<Self> {
        let label = label.into();
        if members.is_empty() {
            return Err(Error::EmptyGroup(label));
        }
        Ok(Self { label, members })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Average covariate row of the group members.
    pub fn mean_covariate(&self, data: &Dataset) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; data.p()];
        for obs in &self.members {
            let row = data.subject(obs.subject)?.row(obs.row);
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        let n = self.members.len() as f64;
        Ok(acc.into_iter().map(|a| a / n).collect())
    }

    /// Observed response average `Ȳ`.
    pub fn observed_mean(&self, data: &Dataset) -> Result<f64> {
        let mut acc = 0.0;
        for obs in &self.members {
            acc += data.subject(obs.subject)?.y[obs.row];
        }
        Ok(acc / self.members.len() as f64)
    }
}
