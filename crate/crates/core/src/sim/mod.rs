//! Synthetic two-arm studies and Monte Carlo coverage of the interval
//! estimators.
//!
//! Every subject carries a baseline covariate `X` and a treatment indicator
//! `U`; the fourth covariate `t` is either a second-period indicator (time
//! design, one or two rows per subject) or a subject-level gender indicator
//! (gender design, one row per subject). The linear predictor is
//! `β₀ + β₁X + β₂U + β₃t + ξ_i` with `ξ_i ~ N(0, σ²)`.

pub(crate) mod report;
mod study;

pub use report::{ConditionalRow, MarginalRow, SimReport};
pub use study::{run_study, run_study_with_progress, CiTarget, PiTarget};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitter::FitConfig;
use crate::interval::DEFAULT_ALPHA;
use crate::model::{logistic, Dataset, Family, SubjectBlock};
use crate::quadrature::{expect_over_normal, gauss_legendre, gh_rule, GHRule};

/// Distribution of the baseline covariate `X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// `X ~ Bernoulli(0.5)`.
    Bernoulli,
    /// `X ~ Uniform(0, 1)`.
    Uniform,
}

impl Baseline {
    /// Numeric code used in the report tables.
    pub fn code(self) -> u8 {
        match self {
            Baseline::Bernoulli => 1,
            Baseline::Uniform => 2,
        }
    }
}

/// Meaning of the fourth covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlType {
    /// One observation per subject; `t` is a gender indicator.
    Gender,
    /// Every subject observed at `t = 0`, the first few also at `t = 1`.
    Time,
}

impl ControlType {
    pub fn code(self) -> u8 {
        match self {
            ControlType::Gender => 1,
            ControlType::Time => 2,
        }
    }
}

impl std::str::FromStr for Baseline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bernoulli" | "1" => Ok(Baseline::Bernoulli),
            "uniform" | "2" => Ok(Baseline::Uniform),
            other => Err(Error::Config(format!("unknown baseline `{other}`"))),
        }
    }
}

impl std::str::FromStr for ControlType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gender" | "1" => Ok(ControlType::Gender),
            "time" | "2" => Ok(ControlType::Time),
            other => Err(Error::Config(format!("unknown design `{other}`"))),
        }
    }
}

/// Observation counts of the four `(U, t)` cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmSizes {
    pub treated_t0: usize,
    pub treated_t1: usize,
    pub control_t0: usize,
    pub control_t1: usize,
}

impl Default for ArmSizes {
    fn default() -> Self {
        Self { treated_t0: 200, treated_t1: 180, control_t0: 200, control_t1: 160 }
    }
}

impl ArmSizes {
    /// All four cells of size `n`, reduced by the default dropout pattern.
    pub fn scaled(n: usize) -> Self {
        Self { treated_t0: n, treated_t1: n * 9 / 10, control_t0: n, control_t1: n * 4 / 5 }
    }

    fn cells(&self) -> [(u8, u8, usize); 4] {
        [
            (1, 0, self.treated_t0),
            (1, 1, self.treated_t1),
            (0, 0, self.control_t0),
            (0, 1, self.control_t1),
        ]
    }
}

/// A Monte Carlo study design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub family: Family,
    pub baseline: Baseline,
    pub control: ControlType,
    /// `(β₀, β_X, β_U, β_t)`.
    pub beta: [f64; 4],
    pub sigma: f64,
    pub kappa: Option<f64>,
    pub arms: ArmSizes,
    pub replications: usize,
    pub seed: u64,
    pub alpha: f64,
    #[serde(default)]
    pub ci_target: CiTarget,
    #[serde(default)]
    pub pi_target: PiTarget,
    #[serde(skip)]
    pub fit: FitConfig,
}

/// Labels of the four groups, in report order.
pub const GROUP_CELLS: [(u8, u8); 4] = [(1, 0), (1, 1), (0, 0), (0, 1)];

pub fn group_label(u: u8, t: u8) -> String {
    format!("U{u}_t{t}")
}

impl SimDesign {
    /// The logistic study: `β = (−0.3, −3, 2, 0.2)`, `σ = 0.5`.
    pub fn logistic(baseline: Baseline, control: ControlType) -> Self {
        Self {
            family: Family::Logistic,
            baseline,
            control,
            beta: [-0.3, -3.0, 2.0, 0.2],
            sigma: 0.5,
            kappa: None,
            arms: ArmSizes::default(),
            replications: 500,
            seed: 20_240_601,
            alpha: DEFAULT_ALPHA,
            ci_target: CiTarget::default(),
            pi_target: PiTarget::default(),
            fit: study::default_fit_config(),
        }
    }

    /// The negative-binomial study: `β = (0.3, −0.2, 0.3, 0.4)`, `σ = 0.1`,
    /// `κ = 50`.
    pub fn negbin(baseline: Baseline, control: ControlType) -> Self {
        Self {
            family: Family::NegBinomial,
            beta: [0.3, -0.2, 0.3, 0.4],
            sigma: 0.1,
            kappa: Some(50.0),
            ..Self::logistic(baseline, control)
        }
    }

    pub fn with_replications(mut self, r: usize) -> Self {
        self.replications = r;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_arms(mut self, arms: ArmSizes) -> Self {
        self.arms = arms;
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.arms.cells().iter().any(|c| c.2 == 0) {
            return Err(Error::Config("every arm size must be positive".into()));
        }
        if self.control == ControlType::Time
            && (self.arms.treated_t1 > self.arms.treated_t0 || self.arms.control_t1 > self.arms.control_t0)
        {
            return Err(Error::Config("time design: second-period arms cannot exceed the first".into()));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        match (self.family, self.kappa) {
            (Family::NegBinomial, Some(k)) if k > 0.0 => {}
            (Family::NegBinomial, _) => return Err(Error::Config("negative-binomial design needs kappa > 0".into())),
            (Family::Logistic, None) => {}
            (Family::Logistic, Some(_)) => return Err(Error::Config("logistic design takes no kappa".into())),
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        self.fit.check()
    }

    fn mean_given(&self, eta: f64, b: f64) -> f64 {
        match self.family {
            Family::Logistic => logistic(eta + b),
            Family::NegBinomial => (eta + b).exp(),
        }
    }

    fn eta(&self, x: f64, u: u8, t: u8) -> f64 {
        self.beta[0] + self.beta[1] * x + self.beta[2] * f64::from(u) + self.beta[3] * f64::from(t)
    }

    /// `E g⁻¹(η + b)` over `b ~ N(0, σ²)`.
    fn marginal_at(&self, eta: f64, rule: &GHRule) -> Result<f64> {
        match self.family {
            Family::Logistic => expect_over_normal(|b| logistic(eta + b), self.sigma * self.sigma, rule),
            Family::NegBinomial => Ok((eta + 0.5 * self.sigma * self.sigma).exp()),
        }
    }
}

/// One simulated sample with the quantities it was drawn from.
#[derive(Debug, Clone)]
pub struct SimSample {
    pub data: Dataset,
    /// The realized random intercepts `ξ_i`.
    pub xi: Vec<f64>,
}

/// Draws one dataset of `design` from `rng`.
pub fn draw_sample(design: &SimDesign, rng: &mut impl Rng) -> Result<SimSample> {
    design.check()?;
    let normal = Normal::new(0.0, design.sigma).map_err(|e| Error::Config(e.to_string()))?;
    let coin = Bernoulli::new(0.5).expect("0.5 is a valid probability");
    let draw_x = |rng: &mut dyn rand::RngCore| match design.baseline {
        Baseline::Bernoulli => f64::from(u8::from(coin.sample(rng))),
        Baseline::Uniform => rng.random_range(0.0..1.0),
    };
    let draw_y = |rng: &mut dyn rand::RngCore, mu: f64| -> Result<f64> {
        Ok(match design.family {
            Family::Logistic => f64::from(u8::from(rng.random_bool(mu))),
            Family::NegBinomial => {
                let kappa = design.kappa.expect("checked");
                let rate = Gamma::new(kappa, mu / kappa).map_err(|e| Error::Config(e.to_string()))?.sample(rng);
                if rate > 0.0 {
                    Poisson::new(rate).map_err(|e| Error::Config(e.to_string()))?.sample(rng)
                } else {
                    0.0
                }
            }
        })
    };

    // Subject plans: (U, list of t values).
    let mut plans: Vec<(u8, Vec<u8>)> = Vec::new();
    match design.control {
        ControlType::Gender => {
            for (u, t, n) in design.arms.cells() {
                plans.extend(std::iter::repeat_n((u, vec![t]), n));
            }
        }
        ControlType::Time => {
            for (u, n0, n1) in [
                (1u8, design.arms.treated_t0, design.arms.treated_t1),
                (0u8, design.arms.control_t0, design.arms.control_t1),
            ] {
                for i in 0..n0 {
                    plans.push((u, if i < n1 { vec![0, 1] } else { vec![0] }));
                }
            }
        }
    }

    let mut subjects = Vec::with_capacity(plans.len());
    let mut xi = Vec::with_capacity(plans.len());
    for (i, (u, times)) in plans.into_iter().enumerate() {
        let x = draw_x(rng);
        let b = if design.sigma > 0.0 { normal.sample(rng) } else { 0.0 };
        let mut rows = Vec::with_capacity(times.len());
        let mut y = Vec::with_capacity(times.len());
        let mut groups = Vec::with_capacity(times.len());
        for &t in &times {
            y.push(draw_y(rng, design.mean_given(design.eta(x, u, t), b))?);
            rows.push(vec![1.0, x, f64::from(u), f64::from(t)]);
            groups.push(GROUP_CELLS.iter().position(|&c| c == (u, t)).expect("cell exists"));
        }
        subjects.push(SubjectBlock::new(format!("s{:04}", i + 1), y, rows, groups)?);
        xi.push(b);
    }
    let labels = GROUP_CELLS.iter().map(|&(u, t)| group_label(u, t)).collect();
    let names = ["(Intercept)", "X", "U", "t"].iter().map(|s| s.to_string()).collect();
    Ok(SimSample { data: Dataset::new(subjects, labels, names)?, xi })
}

/// The replication stream `rep` of `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Dataset of replication `rep` of `design`.
pub fn generate_dataset(design: &SimDesign, rep: u64) -> Result<Dataset> {
    Ok(draw_sample(design, &mut replication_rng(design.seed, rep))?.data)
}

/// Population marginal means `μ_q` of the four groups: the member mean
/// averaged over both the random intercept and the baseline distribution.
pub fn true_group_means(design: &SimDesign) -> Result<[f64; 4]> {
    let rule = gh_rule(40)?;
    let mut out = [0.0; 4];
    for (k, &(u, t)) in GROUP_CELLS.iter().enumerate() {
        out[k] = match design.baseline {
            Baseline::Bernoulli => {
                0.5 * (design.marginal_at(design.eta(0.0, u, t), &rule)? + design.marginal_at(design.eta(1.0, u, t), &rule)?)
            }
            Baseline::Uniform => {
                let (nodes, weights) = gauss_legendre(40, 0.0, 1.0)?;
                let mut acc = 0.0;
                for (x, w) in nodes.iter().zip(&weights) {
                    acc += w * design.marginal_at(design.eta(*x, u, t), &rule)?;
                }
                acc
            }
        };
    }
    Ok(out)
}

/// Per-sample targets of the four groups: the marginal mean averaged over the
/// drawn covariates, and the realized conditional mean using the drawn `ξ_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleTargets {
    pub mu: [f64; 4],
    pub lambda: [f64; 4],
}

pub fn sample_targets(design: &SimDesign, sample: &SimSample) -> Result<SampleTargets> {
    let rule = gh_rule(40)?;
    let mut mu = [0.0; 4];
    let mut lambda = [0.0; 4];
    let mut counts = [0usize; 4];
    for (s, &b) in sample.data.subjects().iter().zip(&sample.xi) {
        for (j, row) in s.rows().enumerate() {
            let g = s.groups[j];
            let eta = design.beta.iter().zip(row).map(|(a, c)| a * c).sum::<f64>();
            mu[g] += design.marginal_at(eta, &rule)?;
            lambda[g] += design.mean_given(eta, b);
            counts[g] += 1;
        }
    }
    for g in 0..4 {
        mu[g] /= counts[g] as f64;
        lambda[g] /= counts[g] as f64;
    }
    Ok(SampleTargets { mu, lambda })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_means_match_reference_values() {
        // Bernoulli baseline, logistic: scipy.integrate.quad over b.
        let l = true_group_means(&SimDesign::logistic(Baseline::Bernoulli, ControlType::Gender)).unwrap();
        for (got, want) in l.iter().zip([0.530_064_176_242_792_5, 0.560_151_909_030_221_3, 0.234_663_844_437_309_95, 0.262_184_243_101_067]) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
        let nb = true_group_means(&SimDesign::negbin(Baseline::Bernoulli, ControlType::Gender)).unwrap();
        for (got, want) in nb.iter().zip([1.665_277_354_471_27, 2.484_301_885_822_956_6, 1.233_667_806_680_964_8, 1.840_416_102_691_599]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn uniform_baseline_integrates_the_covariate() {
        let mut d = SimDesign::negbin(Baseline::Uniform, ControlType::Time);
        d.sigma = 0.0;
        let mu = true_group_means(&d).unwrap();
        // ∫₀¹ exp(0.3 − 0.2x + 0.3) dx
        let exact = (0.6f64.exp() - 0.4f64.exp()) / 0.2;
        assert!((mu[0] - exact).abs() < 1e-12);
    }

    #[test]
    fn arm_sizes_are_exact() {
        for control in [ControlType::Gender, ControlType::Time] {
            let d = SimDesign::logistic(Baseline::Bernoulli, control);
            let data = generate_dataset(&d, 0).unwrap();
            let gi = data.group_index();
            let sizes: Vec<usize> = (0..4).map(|g| gi.size(g)).collect();
            assert_eq!(sizes, vec![200, 180, 200, 160]);
            let k = data.n_subjects();
            assert_eq!(k, if control == ControlType::Gender { 740 } else { 400 });
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let d = SimDesign::negbin(Baseline::Uniform, ControlType::Time);
        let a = generate_dataset(&d, 3).unwrap();
        let b = generate_dataset(&d, 3).unwrap();
        let c = generate_dataset(&d, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.responses(), c.responses());
    }

    #[test]
    fn zero_sigma_targets_coincide() {
        let mut d = SimDesign::logistic(Baseline::Uniform, ControlType::Time);
        d.sigma = 0.0;
        let sample = draw_sample(&d, &mut replication_rng(1, 0)).unwrap();
        let t = sample_targets(&d, &sample).unwrap();
        for g in 0..4 {
            assert!((t.mu[g] - t.lambda[g]).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_designs_are_rejected() {
        let mut d = SimDesign::logistic(Baseline::Bernoulli, ControlType::Time);
        d.replications = 0;
        assert!(d.check().is_err());
        let mut d = SimDesign::negbin(Baseline::Bernoulli, ControlType::Time);
        d.kappa = None;
        assert!(d.check().is_err());
        let mut d = SimDesign::logistic(Baseline::Bernoulli, ControlType::Time);
        d.arms.control_t1 = 300;
        assert!(d.check().is_err());
    }
}
