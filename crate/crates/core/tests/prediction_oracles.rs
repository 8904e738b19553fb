//! The production prediction covariance against the naive-plus-correction
//! form assembled term by term, with the mode derivatives taken by finite
//! differences of the mode finder itself.

use glmm_gm::conditional::{mode_beta_derivative, PredictionStructure};
use glmm_gm::fitter::conditional_mode;
use glmm_gm::model::ResponseModel;
use glmm_gm::sim::{generate_dataset, Baseline, ControlType, SimDesign};
use glmm_gm::{fit, FitConfig, ModelSpec, ParamVector, SubjectBlock};
use nalgebra::{DMatrix, DVector};

fn logistic(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

fn params(beta: &[f64], sigma2: f64) -> ParamVector {
    ParamVector { beta: DVector::from_column_slice(beta), sigma2, kappa: None }
}

/// `∂b̂_i/∂β` by central differences of the conditional mode.
fn fd_mode_derivative(s: &SubjectBlock, beta: &[f64], sigma2: f64) -> DVector<f64> {
    let h = 1e-6;
    DVector::from_iterator(
        beta.len(),
        (0..beta.len()).map(|k| {
            let mut up = beta.to_vec();
            let mut dn = beta.to_vec();
            up[k] += h;
            dn[k] -= h;
            let (bu, _) = conditional_mode(s, &params(&up, sigma2)).unwrap();
            let (bd, _) = conditional_mode(s, &params(&dn, sigma2)).unwrap();
            (bu - bd) / (2.0 * h)
        }),
    )
}

fn toy_subjects() -> Vec<SubjectBlock> {
    let spec: [(&[f64], &[[f64; 2]]); 6] = [
        (&[1.0, 0.0, 1.0], &[[1.0, -0.5], [1.0, 0.2], [1.0, 1.1]]),
        (&[0.0, 0.0, 1.0], &[[1.0, 0.3], [1.0, -1.2], [1.0, 0.8]]),
        (&[1.0, 1.0, 1.0], &[[1.0, 0.9], [1.0, 0.1], [1.0, -0.4]]),
        (&[0.0, 1.0, 0.0], &[[1.0, -0.7], [1.0, 0.6], [1.0, 0.0]]),
        (&[1.0, 0.0, 0.0], &[[1.0, 1.4], [1.0, -0.9], [1.0, 0.5]]),
        (&[0.0, 0.0, 0.0], &[[1.0, -0.1], [1.0, 0.7], [1.0, -1.5]]),
    ];
    spec.iter()
        .enumerate()
        .map(|(i, (y, rows))| {
            SubjectBlock::new(format!("s{i}"), y.to_vec(), rows.iter().map(|r| r.to_vec()).collect(), vec![0; y.len()])
                .unwrap()
        })
        .collect()
}

/// `ν_k + A_k' I(β)⁻¹ A_k` for every row `k`, with `ν_k` the naive
/// conditional variance of `b_i`, `A_k = x_k + (∂b̂_i/∂β)'` and
/// `I(β) = X'(W̃⁻¹ + ZGZ')⁻¹X`.
fn term_by_term(subjects: &[SubjectBlock], beta: &[f64], sigma2: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n: usize = subjects.iter().map(|s| s.n_obs()).sum();
    let p = beta.len();
    let k = subjects.len();
    let mut x = DMatrix::zeros(n, p);
    let mut z = DMatrix::zeros(n, k);
    let mut w = Vec::with_capacity(n);
    let mut weights = Vec::new();
    let mut naive = Vec::new();
    let mut a_rows = Vec::new();
    let mut r = 0;
    for (i, s) in subjects.iter().enumerate() {
        let (b, _) = conditional_mode(s, &params(beta, sigma2)).unwrap();
        let db = fd_mode_derivative(s, beta, sigma2);
        let mut sw = Vec::new();
        let mut total = 0.0;
        for row in s.rows() {
            let eta: f64 = row.iter().zip(beta).map(|(a, c)| a * c).sum::<f64>() + b;
            let mu = logistic(eta);
            let wt = mu * (1.0 - mu);
            for c in 0..p {
                x[(r, c)] = row[c];
            }
            z[(r, i)] = 1.0;
            w.push(wt);
            sw.push(wt);
            total += wt;
            a_rows.push(DVector::from_column_slice(row) + &db);
            r += 1;
        }
        let nu = 1.0 / (total + 1.0 / sigma2);
        naive.extend(std::iter::repeat_n(nu, s.n_obs()));
        weights.push(sw);
    }
    let winv = DMatrix::from_diagonal(&DVector::from_iterator(n, w.iter().map(|v| 1.0 / v)));
    let v = winv + &z * z.transpose() * sigma2;
    let info = x.transpose() * v.try_inverse().unwrap() * &x;
    let info_inv = info.try_inverse().unwrap();
    let c = a_rows.iter().zip(&naive).map(|(a, nu)| nu + a.dot(&(&info_inv * a))).collect();
    (c, weights)
}

#[test]
fn single_subject_scalar_matches_term_by_term() {
    let s = SubjectBlock::new(
        "only",
        vec![1.0, 0.0, 1.0, 1.0],
        vec![vec![1.0, -0.4], vec![1.0, 0.9], vec![1.0, 0.1], vec![1.0, 1.6]],
        vec![0; 4],
    )
    .unwrap();
    let beta = [0.2, -0.7];
    let sigma2 = 0.6;
    let subjects = [s];
    let (oracle, weights) = term_by_term(&subjects, &beta, sigma2);
    let structure = PredictionStructure::from_parts(&subjects, weights, sigma2).unwrap();
    for (k, row) in subjects[0].rows().enumerate() {
        let c = structure.covariance(&[(row, 0)]).unwrap()[(0, 0)];
        assert!((c - oracle[k]).abs() <= 1e-7 * oracle[k], "row {k}: {c} vs {}", oracle[k]);
    }
}

#[test]
fn multi_subject_diagonal_matches_term_by_term() {
    let subjects = toy_subjects();
    let beta = [-0.1, 0.5];
    for sigma2 in [0.05, 0.4, 2.0] {
        let (oracle, weights) = term_by_term(&subjects, &beta, sigma2);
        let structure = PredictionStructure::from_parts(&subjects, weights, sigma2).unwrap();
        let rows: Vec<(&[f64], usize)> =
            subjects.iter().enumerate().flat_map(|(i, s)| s.rows().map(move |r| (r, i))).collect();
        let c = structure.covariance(&rows).unwrap();
        for (k, o) in oracle.iter().enumerate() {
            assert!((c[(k, k)] - o).abs() <= 1e-7 * o, "sigma2 {sigma2}, row {k}: {} vs {o}", c[(k, k)]);
        }
    }
}

#[test]
fn implicit_mode_derivative_matches_finite_differences() {
    let design = SimDesign::logistic(Baseline::Uniform, ControlType::Time);
    let data = generate_dataset(&design, 5).unwrap();
    let fitted = fit(&data, &ModelSpec::new(design.family, 4), &FitConfig::default()).unwrap();
    assert!(fitted.params.sigma2 > 0.0, "need an interior fit");
    let beta: Vec<f64> = fitted.params.beta.iter().copied().collect();
    for i in (0..data.n_subjects()).step_by(37) {
        let analytic = mode_beta_derivative(&fitted, i).unwrap();
        let fd = fd_mode_derivative(data.subject(i).unwrap(), &beta, fitted.params.sigma2);
        let err = (&analytic - &fd).amax() / fd.amax().max(1e-3);
        assert!(err <= 1e-5, "subject {i}: {analytic} vs {fd}");
    }
}

#[test]
fn working_weight_is_the_logistic_variance() {
    let model = params(&[0.0], 0.1).obs_model();
    for eta in [-4.0, -0.3, 0.0, 2.5] {
        let mu = logistic(eta);
        assert!((model.working_weight(eta, 1.0) - mu * (1.0 - mu)).abs() < 1e-15);
    }
}
