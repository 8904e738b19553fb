//! Conditional (subject-specific) group means and their prediction variance.
//!
//! With `b̂` the conditional modes and `W̃` the iterative weights at
//! `η̂ = Xβ̂ + Zb̂`, the prediction covariance of `η̂_q` is
//! `C = (X_q; Z_q)' M⁻¹ (X_q; Z_q)` for the mixed-model matrix
//! `M = [[X'W̃X, X'W̃Z], [Z'W̃X, Z'W̃Z + G⁻¹]]`. Because `Z'W̃Z + G⁻¹` is
//! diagonal with entries `d_i = Σ_{j∈i} W̃_j + 1/σ²`, eliminating the
//! random-effect block leaves a `p × p` Schur complement
//! `S = X'W̃X − Σ_i B_i B_i'/d_i` with `B_i = Σ_{j∈i} W̃_j x_j`, and
//!
//! `C_kl = r_k' S⁻¹ r_l + [i(k) = i(l)] / d_{i(k)}`, `r_k = x_k − B_{i(k)}/d_{i(k)}`.
//!
//! At `σ² = 0` the random-effect block drops out (`1/d_i = 0`) and `C`
//! reduces to the fixed-effects `X_q'(X'W̃X)⁻¹X_q`.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::fitter::FittedModel;
use crate::interval::{pi_direct, pi_inverse};
use crate::marginal::{EstimateKind, GroupMeanEstimate};
use crate::model::{inverse_link, inverse_link_derivative, Family, Group, ObsRef, ResponseModel, SubjectBlock};

/// The factorized mixed-model system of one fit.
#[derive(Debug, Clone)]
pub struct PredictionStructure {
    p: usize,
    /// `1/d_i` per subject (zero when σ² = 0).
    inv_d: Vec<f64>,
    /// `B_i / d_i` per subject.
    shift: Vec<DVector<f64>>,
    schur: Cholesky<f64, Dyn>,
    /// Iterative weights, per subject and row.
    weights: Vec<Vec<f64>>,
    jittered: bool,
}

impl PredictionStructure {
    /// Builds the structure from the fitted modes and iterative weights.
    pub fn new(fitted: &FittedModel) -> Result<Self> {
        let model = fitted.params.obs_model();
        let data = fitted.dataset();
        let weights: Vec<Vec<f64>> = data
            .subjects()
            .iter()
            .zip(&fitted.cond_modes)
            .map(|(s, &b)| {
                s.offsets(&fitted.params.beta)
                    .iter()
                    .zip(&s.weights)
                    .map(|(&o, &w)| model.working_weight(o + b, w))
                    .collect()
            })
            .collect();
        Self::from_parts(data.subjects(), weights, fitted.params.sigma2)
    }

    /// Builds the structure for arbitrary subjects, iterative weights and
    /// random-intercept variance; the family enters only through `weights`.
    pub fn from_parts(subjects: &[SubjectBlock], weights: Vec<Vec<f64>>, sigma2: f64) -> Result<Self> {
        if !(sigma2 >= 0.0) {
            return Err(Error::InvalidParameter(format!("sigma2 must be >= 0, got {sigma2}")));
        }
        if weights.len() != subjects.len() {
            return Err(Error::DimensionMismatch { expected: subjects.len(), found: weights.len() });
        }
        let p = subjects.first().map_or(0, SubjectBlock::p);
        let mut xtwx = DMatrix::zeros(p, p);
        let mut inv_d = Vec::with_capacity(subjects.len());
        let mut shift = Vec::with_capacity(subjects.len());
        for (s, w) in subjects.iter().zip(&weights) {
            if w.len() != s.n_obs() {
                return Err(Error::DimensionMismatch { expected: s.n_obs(), found: w.len() });
            }
            let mut b = DVector::zeros(p);
            let mut total = 0.0;
            for (row, &wt) in s.rows().zip(w) {
                if !(wt > 0.0) || !wt.is_finite() {
                    return Err(Error::NonFinite(format!("iterative weight {wt} for subject `{}`", s.id)));
                }
                let x = DVector::from_column_slice(row);
                xtwx.ger(wt, &x, &x, 1.0);
                b.axpy(wt, &x, 1.0);
                total += wt;
            }
            let id = if sigma2 == 0.0 { 0.0 } else { 1.0 / (total + 1.0 / sigma2) };
            xtwx.ger(-id, &b, &b, 1.0);
            inv_d.push(id);
            shift.push(b * id);
        }
        let schur_matrix = (&xtwx + xtwx.transpose()) * 0.5;
        let (schur, jittered) = match schur_matrix.clone().cholesky() {
            Some(c) => (c, false),
            None => {
                let scale = schur_matrix.diagonal().amax().max(1.0);
                let jittered = &schur_matrix + DMatrix::identity(p, p) * (1e-10 * scale);
                let c = jittered
                    .cholesky()
                    .ok_or_else(|| Error::NonFinite("mixed-model matrix is singular".into()))?;
                (c, true)
            }
        };
        Ok(Self { p, inv_d, shift, schur, weights, jittered })
    }

    /// Whether a diagonal jitter was needed to factor the Schur complement.
    pub fn jittered(&self) -> bool {
        self.jittered
    }

    pub fn iterative_weight(&self, obs: ObsRef) -> f64 {
        self.weights[obs.subject][obs.row]
    }

    /// `x − B_i/d_i`.
    fn residual_row(&self, x: &[f64], subject: usize) -> DVector<f64> {
        DVector::from_column_slice(x) - &self.shift[subject]
    }

    /// Prediction covariance `C` of the linear predictors at the given
    /// (row, subject) pairs.
    pub fn covariance(&self, rows: &[(&[f64], usize)]) -> Result<DMatrix<f64>> {
        let n = rows.len();
        let mut r = DMatrix::zeros(self.p, n);
        for (k, (x, s)) in rows.iter().enumerate() {
            if *s >= self.inv_d.len() {
                return Err(Error::UnknownSubject(*s));
            }
            if x.len() != self.p {
                return Err(Error::DimensionMismatch { expected: self.p, found: x.len() });
            }
            r.set_column(k, &self.residual_row(x, *s));
        }
        let solved = self.schur.solve(&r);
        let mut c = r.transpose() * solved;
        for k in 0..n {
            for l in 0..n {
                if rows[k].1 == rows[l].1 {
                    c[(k, l)] += self.inv_d[rows[k].1];
                }
            }
        }
        Ok((&c + c.transpose()) * 0.5)
    }

    /// `g' C g` without forming `C`.
    pub fn quadratic_form(&self, rows: &[(&[f64], usize)], g: &[f64]) -> Result<f64> {
        if g.len() != rows.len() {
            return Err(Error::DimensionMismatch { expected: rows.len(), found: g.len() });
        }
        let mut v = DVector::zeros(self.p);
        let mut per_subject: BTreeMap<usize, f64> = BTreeMap::new();
        for ((x, s), &gk) in rows.iter().zip(g) {
            if *s >= self.inv_d.len() {
                return Err(Error::UnknownSubject(*s));
            }
            v.axpy(gk, &self.residual_row(x, *s), 1.0);
            *per_subject.entry(*s).or_insert(0.0) += gk;
        }
        let fixed = v.dot(&self.schur.solve(&v));
        let random: f64 = per_subject.iter().map(|(&s, &t)| t * t * self.inv_d[s]).sum();
        Ok(fixed + random)
    }
}

fn nonempty(group: &Group) -> Result<()> {
    if group.members.is_empty() {
        Err(Error::EmptyGroup(group.label.clone()))
    } else {
        Ok(())
    }
}

/// `x'β̂ + b̂_i` for subject index `subject`.
pub fn predicted_eta(fitted: &FittedModel, x: &[f64], subject: usize) -> Result<f64> {
    let b = *fitted.cond_modes.get(subject).ok_or(Error::UnknownSubject(subject))?;
    crate::model::linear_predictor(&fitted.params, x, b)
}

fn member_etas(fitted: &FittedModel, group: &Group) -> Result<Vec<f64>> {
    let data = fitted.dataset();
    group
        .members
        .iter()
        .map(|o| predicted_eta(fitted, data.subject(o.subject)?.row(o.row), o.subject))
        .collect()
}

/// `λ̂_q = (1/N_q) Σ g⁻¹(η̂_i)`.
pub fn conditional_group_mean(fitted: &FittedModel, group: &Group) -> Result<f64> {
    nonempty(group)?;
    let family = fitted.spec.family;
    let etas = member_etas(fitted, group)?;
    Ok(etas.iter().map(|&e| inverse_link(family, e)).sum::<f64>() / group.size() as f64)
}

fn member_rows<'a>(fitted: &'a FittedModel, group: &Group) -> Result<Vec<(&'a [f64], usize)>> {
    let data = fitted.dataset();
    group
        .members
        .iter()
        .map(|o| Ok((data.subject(o.subject)?.row(o.row), o.subject)))
        .collect()
}

/// `N_q × N_q` prediction covariance of `η̂_q`.
pub fn prediction_covariance(fitted: &FittedModel, group: &Group) -> Result<DMatrix<f64>> {
    nonempty(group)?;
    PredictionStructure::new(fitted)?.covariance(&member_rows(fitted, group)?)
}

/// `(1/N_q²) g' C g` with `g` the inverse-link derivatives at `η̂_q`.
pub fn conditional_group_variance(fitted: &FittedModel, group: &Group) -> Result<f64> {
    conditional_group_variance_with(&PredictionStructure::new(fitted)?, fitted, group)
}

/// As [`conditional_group_variance`], reusing a prebuilt structure.
pub fn conditional_group_variance_with(structure: &PredictionStructure, fitted: &FittedModel, group: &Group) -> Result<f64> {
    nonempty(group)?;
    let family = fitted.spec.family;
    let g: Vec<f64> = member_etas(fitted, group)?
        .iter()
        .map(|&e| inverse_link_derivative(family, e))
        .collect();
    let n = group.size() as f64;
    Ok((structure.quadratic_form(&member_rows(fitted, group)?, &g)? / (n * n)).max(0.0))
}

/// Benchmark `λ̂* = (1/N_q) Σ g⁻¹(x̄_q'β̂ + b̂_i)`.
pub fn predictor_at_mean_covariate(fitted: &FittedModel, group: &Group) -> Result<f64> {
    nonempty(group)?;
    let xbar = group.mean_covariate(fitted.dataset())?;
    let family: Family = fitted.spec.family;
    let mut acc = 0.0;
    for o in &group.members {
        acc += inverse_link(family, predicted_eta(fitted, &xbar, o.subject)?);
    }
    Ok(acc / group.size() as f64)
}

/// `∂b̂_i/∂β = −(J_i'W̃_iJ_i + 1/σ²)⁻¹ J_i'W̃_iX_i`.
pub fn mode_beta_derivative(fitted: &FittedModel, subject: usize) -> Result<DVector<f64>> {
    let s = fitted.dataset().subject(subject)?;
    let p = s.p();
    if fitted.params.sigma2 == 0.0 {
        return Ok(DVector::zeros(p));
    }
    let model = fitted.params.obs_model();
    let b = fitted.cond_modes[subject];
    let mut jwx = DVector::zeros(p);
    let mut total = 0.0;
    for ((row, &o), &w) in s.rows().zip(&s.offsets(&fitted.params.beta)).zip(&s.weights) {
        let wt = model.working_weight(o + b, w);
        jwx.axpy(wt, &DVector::from_column_slice(row), 1.0);
        total += wt;
    }
    Ok(-jwx / (total + 1.0 / fitted.params.sigma2))
}

/// Point, variance and the `direct` and `inverse` prediction intervals for
/// `λ_q`.
pub fn conditional_estimate(fitted: &FittedModel, group: &Group, alpha: f64) -> Result<GroupMeanEstimate> {
    conditional_estimate_with(&PredictionStructure::new(fitted)?, fitted, group, alpha)
}

pub fn conditional_estimate_with(
    structure: &PredictionStructure,
    fitted: &FittedModel,
    group: &Group,
    alpha: f64,
) -> Result<GroupMeanEstimate> {
    let point = conditional_group_mean(fitted, group)?;
    let variance = conditional_group_variance_with(structure, fitted, group)?;
    let mut intervals = BTreeMap::new();
    intervals.insert("direct".to_string(), pi_direct(point, variance, alpha)?);
    intervals.insert("inverse".to_string(), pi_inverse(point, variance, alpha, fitted.spec.family)?);
    let mut diagnostics = Vec::new();
    if structure.jittered() {
        diagnostics.push("Schur complement needed diagonal jitter".to_string());
    }
    Ok(GroupMeanEstimate {
        group_id: group.label.clone(),
        kind: EstimateKind::Conditional,
        point,
        variance,
        intervals,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subjects() -> Vec<SubjectBlock> {
        vec![
            SubjectBlock::new("a", vec![1.0, 0.0], vec![vec![1.0, 0.0], vec![1.0, 1.0]], vec![0, 1]).unwrap(),
            SubjectBlock::new("b", vec![0.0, 0.0], vec![vec![1.0, 0.5], vec![1.0, -1.0]], vec![0, 1]).unwrap(),
            SubjectBlock::new("c", vec![1.0], vec![vec![1.0, 2.0]], vec![0]).unwrap(),
        ]
    }

    /// Inverts the full mixed-model matrix directly.
    fn dense_covariance(subjects: &[SubjectBlock], w: &[Vec<f64>], sigma2: f64, rows: &[(&[f64], usize)]) -> DMatrix<f64> {
        let k = subjects.len();
        let p = subjects[0].p();
        let mut m = DMatrix::zeros(p + k, p + k);
        for (i, (s, ws)) in subjects.iter().zip(w).enumerate() {
            for (row, &wt) in s.rows().zip(ws) {
                let mut v = DVector::zeros(p + k);
                v.rows_mut(0, p).copy_from_slice(row);
                v[p + i] = 1.0;
                m.ger(wt, &v, &v, 1.0);
            }
            m[(p + i, p + i)] += 1.0 / sigma2;
        }
        let minv = m.try_inverse().unwrap();
        let mut a = DMatrix::zeros(p + k, rows.len());
        for (c, (x, s)) in rows.iter().enumerate() {
            a.view_mut((0, c), (p, 1)).copy_from_slice(x);
            a[(p + s, c)] = 1.0;
        }
        a.transpose() * minv * a
    }

    #[test]
    fn block_elimination_matches_dense_inverse() {
        let subs = subjects();
        let w = vec![vec![0.2, 0.25], vec![0.1, 0.15], vec![0.22]];
        let st = PredictionStructure::from_parts(&subs, w.clone(), 0.7).unwrap();
        let rows: Vec<(&[f64], usize)> = vec![(subs[0].row(0), 0), (subs[0].row(1), 0), (subs[2].row(0), 2), (subs[1].row(1), 1)];
        let c = st.covariance(&rows).unwrap();
        let dense = dense_covariance(&subs, &w, 0.7, &rows);
        assert!((&c - &dense).amax() < 1e-10, "{c} vs {dense}");
        let g = [0.3, -0.1, 0.7, 0.2];
        let gv = DVector::from_column_slice(&g);
        let direct = (gv.transpose() * &c * &gv)[(0, 0)];
        assert!((st.quadratic_form(&rows, &g).unwrap() - direct).abs() < 1e-12);
        let eig = c.symmetric_eigenvalues();
        assert!(eig.min() >= -1e-8 * eig.max());
    }

    #[test]
    fn zero_variance_drops_the_random_block() {
        let subs = subjects();
        let w = vec![vec![0.2, 0.25], vec![0.1, 0.15], vec![0.22]];
        let st = PredictionStructure::from_parts(&subs, w.clone(), 0.0).unwrap();
        let rows: Vec<(&[f64], usize)> = vec![(subs[1].row(0), 1), (subs[2].row(0), 2)];
        let c = st.covariance(&rows).unwrap();
        let mut xtwx = DMatrix::zeros(2, 2);
        for (s, ws) in subs.iter().zip(&w) {
            for (row, &wt) in s.rows().zip(ws) {
                let x = DVector::from_column_slice(row);
                xtwx.ger(wt, &x, &x, 1.0);
            }
        }
        let xq = DMatrix::from_columns(&[DVector::from_column_slice(rows[0].0), DVector::from_column_slice(rows[1].0)]);
        let expected = xq.transpose() * xtwx.try_inverse().unwrap() * xq;
        assert!((&c - &expected).amax() < 1e-12);
        let tiny = PredictionStructure::from_parts(&subs, w, 1e-12).unwrap().covariance(&rows).unwrap();
        assert!((&tiny - &expected).amax() < 1e-9);
    }

    #[test]
    fn diagonal_grows_with_sigma2() {
        let subs = subjects();
        let w = vec![vec![0.25, 0.25], vec![0.25, 0.25], vec![0.25]];
        let rows: Vec<(&[f64], usize)> = vec![(subs[0].row(0), 0), (subs[1].row(1), 1), (subs[2].row(0), 2)];
        let mut last = [0.0; 3];
        for s2 in [0.01, 0.1, 0.5, 1.0, 5.0, 50.0] {
            let c = PredictionStructure::from_parts(&subs, w.clone(), s2).unwrap().covariance(&rows).unwrap();
            for k in 0..3 {
                assert!(c[(k, k)] > last[k]);
                last[k] = c[(k, k)];
            }
        }
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let subs = subjects();
        assert!(PredictionStructure::from_parts(&subs, vec![vec![0.2, 0.2]], 1.0).is_err());
        assert!(PredictionStructure::from_parts(&subs, vec![vec![0.2, 0.2], vec![0.2, 0.0], vec![0.2]], 1.0).is_err());
        let st = PredictionStructure::from_parts(&subs, vec![vec![0.2, 0.2], vec![0.2, 0.2], vec![0.2]], 1.0).unwrap();
        assert!(matches!(st.covariance(&[(subs[0].row(0), 7)]), Err(Error::UnknownSubject(7))));
    }
}
