//! Confidence and prediction intervals for group means.
//!
//! Every interval is a normal approximation on some scale: the mean scale
//! (direct), the link scale (inverse), or the log scale of a moment-matched
//! lognormal.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::Family;

/// Default two-sided error rate.
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    /// Nominal coverage `1 − α`.
    pub level: f64,
}

impl Interval {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Standard normal quantile `z_{1−α/2}`.
pub fn z_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if alpha == 1.0 {
        return Ok(0.0);
    }
    let n = Normal::standard();
    Ok(n.inverse_cdf(1.0 - alpha / 2.0))
}

fn check_variance(variance: f64) -> Result<f64> {
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(Error::InvalidParameter(format!("variance must be >= 0, got {variance}")));
    }
    Ok(variance.sqrt())
}

/// Wald interval `point ± z √variance`.
pub fn ci_direct(point: f64, variance: f64, alpha: f64) -> Result<Interval> {
    let sd = check_variance(variance)?;
    let z = z_quantile(alpha)?;
    Ok(Interval { lower: point - z * sd, upper: point + z * sd, level: 1.0 - alpha })
}

/// Wald interval on the logit scale, with SD `√variance / (p(1 − p))`,
/// mapped back through the inverse logit.
pub fn ci_inverse_logit(point: f64, variance: f64, alpha: f64) -> Result<Interval> {
    if !(point > 0.0 && point < 1.0) {
        return Err(Error::OutOfRange(format!("logit interval needs a point in (0, 1), got {point}")));
    }
    let sd = check_variance(variance)? / (point * (1.0 - point));
    let z = z_quantile(alpha)?;
    let centre = (point / (1.0 - point)).ln();
    let back = |e: f64| 1.0 / (1.0 + (-e).exp());
    Ok(Interval { lower: back(centre - z * sd), upper: back(centre + z * sd), level: 1.0 - alpha })
}

/// Wald interval on the log scale, with SD `√variance / point`.
pub fn ci_inverse_log(point: f64, variance: f64, alpha: f64) -> Result<Interval> {
    if !(point > 0.0) || !point.is_finite() {
        return Err(Error::OutOfRange(format!("log interval needs a positive point, got {point}")));
    }
    let sd = check_variance(variance)? / point;
    let z = z_quantile(alpha)?;
    Ok(Interval { lower: point * (-z * sd).exp(), upper: point * (z * sd).exp(), level: 1.0 - alpha })
}

/// Quantile interval of the lognormal matched to the group total: mean
/// `n·point` and variance `n²·variance`, divided back by `n`.
pub fn ci_lognormal(point: f64, variance: f64, n: usize, alpha: f64) -> Result<Interval> {
    if !(point > 0.0) || !point.is_finite() {
        return Err(Error::OutOfRange(format!("lognormal interval needs a positive point, got {point}")));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("lognormal interval needs a nonempty group".into()));
    }
    check_variance(variance)?;
    let z = z_quantile(alpha)?;
    let total = n as f64 * point;
    let s2 = (variance / (point * point)).ln_1p();
    let s = s2.sqrt();
    let m = total.ln() - 0.5 * s2;
    Ok(Interval {
        lower: (m - z * s).exp() / n as f64,
        upper: (m + z * s).exp() / n as f64,
        level: 1.0 - alpha,
    })
}

/// Prediction interval on the mean scale.
pub fn pi_direct(point: f64, variance: f64, alpha: f64) -> Result<Interval> {
    ci_direct(point, variance, alpha)
}

/// Prediction interval built on the link scale of `family`.
pub fn pi_inverse(point: f64, variance: f64, alpha: f64, family: Family) -> Result<Interval> {
    match family {
        Family::Logistic => ci_inverse_logit(point, variance, alpha),
        Family::NegBinomial => ci_inverse_log(point, variance, alpha),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::LogNormal;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn z_matches_reference() {
        // scipy.stats.norm.ppf(0.975)
        assert!(close(z_quantile(0.05).unwrap(), 1.959_963_984_540_054, 1e-9));
        assert_eq!(z_quantile(1.0).unwrap(), 0.0);
        assert!(z_quantile(0.0).is_err());
    }

    #[test]
    fn direct_examples() {
        let i = ci_direct(0.5, 0.0004, 0.05).unwrap();
        assert!(close(i.lower, 0.460_800_720_309_198_94, 1e-9) && close(i.upper, 0.539_199_279_690_801_1, 1e-9));
        let d = ci_direct(0.5, 0.0, 0.05).unwrap();
        assert_eq!((d.lower, d.upper), (0.5, 0.5));
        assert_eq!(ci_direct(0.5, 0.0004, 1.0).unwrap().width(), 0.0);
        let p = pi_direct(0.531, 0.000576, 0.05).unwrap();
        assert!(close(p.lower, 0.483_960_864_371_038_75, 1e-9) && close(p.upper, 0.578_039_135_628_961_4, 1e-9));
    }

    #[test]
    fn inverse_logit_examples() {
        let i = ci_inverse_logit(0.5, 0.0004, 0.05).unwrap();
        assert!(close(i.lower, 0.460_880_833_976_140_8, 1e-9) && close(i.upper, 0.539_119_166_023_859_2, 1e-9));
        let d = ci_inverse_logit(0.3, 0.0, 0.05).unwrap();
        assert!(close(d.lower, 0.3, 1e-15) && close(d.upper, 0.3, 1e-15));
        assert!(ci_inverse_logit(1.0, 0.01, 0.05).is_err());
        let symmetric = pi_inverse(0.5, 0.01, 0.05, Family::Logistic).unwrap();
        assert!(close(symmetric.lower + symmetric.upper, 1.0, 1e-14));
    }

    #[test]
    fn inverse_log_examples() {
        let i = ci_inverse_log(1.665, 0.0064, 0.05).unwrap();
        assert!(close(i.lower, 1.515_359_462_403_600_2, 1e-9) && close(i.upper, 1.829_417_421_265_059, 1e-9));
        let p = pi_inverse(1.665, 0.0069, 0.05, Family::NegBinomial).unwrap();
        assert!(close(p.lower, 1.509_899_722_863_871, 1e-9) && close(p.upper, 1.836_032_524_558_544_5, 1e-9));
        assert!(ci_inverse_log(0.0, 0.1, 0.05).is_err());
    }

    #[test]
    fn lognormal_matches_cdf_inversion() {
        let (point, variance, n) = (1.665, 0.0064, 200usize);
        let i = ci_lognormal(point, variance, n, 0.05).unwrap();
        let s2 = (1.0 + variance / (point * point)).ln();
        let total = n as f64 * point;
        let dist = LogNormal::new(total.ln() - s2 / 2.0, s2.sqrt()).unwrap();
        let invert = |q: f64| {
            let (mut lo, mut hi) = (0.0, 10.0 * total);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if dist.cdf(mid) < q {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi) / n as f64
        };
        assert!(close(i.lower, invert(0.025), 1e-8));
        assert!(close(i.upper, invert(0.975), 1e-8));
        assert!(close(i.lower, 1.513_695_461_900_617_5, 1e-9));
        assert!(i.lower < point && point < i.upper);
    }

    #[test]
    fn lognormal_tends_to_inverse_log() {
        let a = ci_lognormal(2.0, 1e-10, 10, 0.05).unwrap();
        let b = ci_inverse_log(2.0, 1e-10, 0.05).unwrap();
        assert!(close(a.lower, b.lower, 1e-9) && close(a.upper, b.upper, 1e-9));
    }

    proptest! {
        #[test]
        fn intervals_contain_the_point(point in 0.05f64..0.95, var in 0.0f64..0.05, alpha in 0.01f64..0.5) {
            for i in [
                ci_direct(point, var, alpha).unwrap(),
                ci_inverse_logit(point, var, alpha).unwrap(),
            ] {
                prop_assert!(i.contains(point));
            }
            let l = ci_inverse_logit(point, var, alpha).unwrap();
            prop_assert!(l.lower >= 0.0 && l.upper <= 1.0);
        }

        #[test]
        fn count_intervals_contain_the_point(point in 0.01f64..50.0, rel in 0.0f64..1.0, n in 1usize..500, alpha in 0.01f64..0.5) {
            // Beyond variance ≈ point² the lognormal upper quantile can fall below the mean.
            let var = rel * point * point;
            for i in [
                ci_direct(point, var, alpha).unwrap(),
                ci_inverse_log(point, var, alpha).unwrap(),
                ci_lognormal(point, var, n, alpha).unwrap(),
            ] {
                prop_assert!(i.contains(point));
            }
            prop_assert!(ci_inverse_log(point, var, alpha).unwrap().lower > 0.0);
        }
    }
}
