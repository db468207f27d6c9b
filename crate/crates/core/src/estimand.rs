//! Model parameters of the logistic random-intercept model and the marginal
//! risk difference they imply.
//!
//! For cluster effects `w ~ N(0, sigma^2)` the marginal event rate in arm `a`
//! is `mu(a) = E_w[expit(beta0 + beta1 * a + w)]`, and the estimand is
//! `delta = mu(1) - mu(0)`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numeric::{expit, logit, solve_increasing, QuadratureRule, RootOptions};

/// Latent-scale residual variance of the logistic distribution.
pub const LOGISTIC_VARIANCE: f64 = PI * PI / 3.0;

/// `theta = (beta0, beta1, sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Control-arm intercept, log-odds scale.
    pub beta0: f64,
    /// Treatment effect, log-odds scale.
    pub beta1: f64,
    /// Standard deviation of the cluster intercepts.
    pub sigma: f64,
}

impl ModelParams {
    pub fn new(beta0: f64, beta1: f64, sigma: f64) -> Result<Self> {
        let p = Self { beta0, beta1, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta0.is_finite() && self.beta1.is_finite() && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("non-finite model parameters {self:?}")));
        }
        if self.sigma < 0.0 {
            return Err(Error::invalid(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Linear predictor without the cluster effect.
    #[inline]
    pub fn eta(&self, arm: u8) -> f64 {
        self.beta0 + self.beta1 * f64::from(arm)
    }

    /// Latent-scale intraclass correlation.
    pub fn icc(&self) -> f64 {
        icc_from_sigma(self.sigma)
    }
}

/// Interval hypothesis `H1: delta in (lower, upper)`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hypothesis {
    lower: f64,
    upper: f64,
}

impl Hypothesis {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() {
            return Err(Error::invalid("hypothesis endpoints must not be NaN"));
        }
        if lower >= upper {
            return Err(Error::invalid(format!(
                "hypothesis needs lower < upper, got ({lower}, {upper})"
            )));
        }
        if lower.is_infinite() && upper.is_infinite() {
            return Err(Error::invalid("at most one hypothesis endpoint may be infinite"));
        }
        Ok(Self { lower, upper })
    }

    /// `H1: delta < upper`.
    pub fn below(upper: f64) -> Result<Self> {
        Self::new(f64::NEG_INFINITY, upper)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// Whether `delta` lies strictly inside the interval.
    pub fn contains(&self, delta: f64) -> bool {
        delta > self.lower && delta < self.upper
    }
}

/// `E[expit(eta + sigma X)]`, `X ~ N(0, 1)`, for validated inputs.
#[inline]
pub(crate) fn logistic_normal_mean(eta: f64, sigma: f64, rule: &QuadratureRule) -> f64 {
    if sigma == 0.0 {
        expit(eta)
    } else if sigma <= 1.0 {
        rule.expect(|x| expit(eta + sigma * x))
    } else {
        rule.expect_logistic_normal_cdf(eta, sigma)
    }
}

/// Marginal event rate of one arm, integrating the cluster effect out.
pub fn marginal_mean(params: &ModelParams, arm: u8, rule: &QuadratureRule) -> Result<f64> {
    params.validate()?;
    if arm > 1 {
        return Err(Error::invalid(format!("arm must be 0 or 1, got {arm}")));
    }
    Ok(logistic_normal_mean(params.eta(arm), params.sigma, rule))
}

/// Marginal risk difference `mu(1) - mu(0)`.
pub fn estimand_delta(params: &ModelParams, rule: &QuadratureRule) -> Result<f64> {
    params.validate()?;
    Ok(delta_unchecked(params, rule))
}

#[inline]
pub(crate) fn delta_unchecked(params: &ModelParams, rule: &QuadratureRule) -> f64 {
    logistic_normal_mean(params.eta(1), params.sigma, rule)
        - logistic_normal_mean(params.eta(0), params.sigma, rule)
}

fn check_rate(rate: f64, what: &str) -> Result<()> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::invalid(format!("{what} must lie in (0, 1), got {rate}")));
    }
    Ok(())
}

fn root_opts() -> RootOptions {
    RootOptions {
        f_tol: 1e-13,
        ..RootOptions::default()
    }
}

/// Intercept `beta0` whose marginal control rate equals `target`.
pub fn solve_intercept(target: f64, sigma: f64, rule: &QuadratureRule) -> Result<f64> {
    check_rate(target, "target marginal rate")?;
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::invalid(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    let center = logit(target);
    if sigma == 0.0 {
        return Ok(center);
    }
    if target == 0.5 {
        return Ok(0.0);
    }
    solve_increasing(
        |b0| logistic_normal_mean(b0, sigma, rule),
        target,
        center - 6.0 * sigma - 1.0,
        center + 1.0,
        root_opts(),
    )
}

/// Treatment effect `beta1` whose marginal treated rate equals `target`, given `beta0` and `sigma`.
pub fn solve_slope(beta0: f64, target: f64, sigma: f64, rule: &QuadratureRule) -> Result<f64> {
    check_rate(target, "target marginal rate")?;
    if !beta0.is_finite() {
        return Err(Error::invalid("beta0 must be finite"));
    }
    let b0_treated = solve_intercept(target, sigma, rule)?;
    Ok(b0_treated - beta0)
}

/// Latent-scale ICC to cluster-effect standard deviation: `sqrt(icc / (1 - icc) * pi^2 / 3)`.
pub fn sigma_from_icc(icc: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&icc) {
        return Err(Error::invalid(format!("icc must lie in [0, 1), got {icc}")));
    }
    Ok((icc / (1.0 - icc) * LOGISTIC_VARIANCE).sqrt())
}

/// Inverse of [`sigma_from_icc`].
pub fn icc_from_sigma(sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    s2 / (s2 + LOGISTIC_VARIANCE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Plain Monte Carlo over `n` normal draws; returns (mean, standard error).
    fn mc_marginal(eta: f64, sigma: f64, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            let v = expit(eta + sigma * x);
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let var = (s2 / n as f64 - mean * mean).max(0.0);
        (mean, (var / n as f64).sqrt())
    }

    fn rule() -> QuadratureRule {
        QuadratureRule::default()
    }

    #[test]
    fn sigma_zero_collapses() {
        let p = ModelParams::new(logit(0.02), 0.0, 0.0).unwrap();
        assert_eq!(marginal_mean(&p, 0, &rule()).unwrap(), expit(logit(0.02)));
        let p = ModelParams::new(-2.0, 0.7, 0.0).unwrap();
        let d = estimand_delta(&p, &rule()).unwrap();
        assert_eq!(d, expit(-1.3) - expit(-2.0));
    }

    #[test]
    fn symmetric_center() {
        let p = ModelParams::new(0.0, 0.0, 1.0).unwrap();
        assert!((marginal_mean(&p, 0, &rule()).unwrap() - 0.5).abs() < 1e-15);
        let p = ModelParams::new(0.0, 0.0, 2.5).unwrap();
        assert!((marginal_mean(&p, 0, &rule()).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn moderate_icc_matches_monte_carlo() {
        let sigma = 0.41612;
        let p = ModelParams::new(logit(0.02), 0.0, sigma).unwrap();
        let q = marginal_mean(&p, 0, &rule()).unwrap();
        let (mc, _) = mc_marginal(logit(0.02), sigma, 10_000_000, 11);
        assert!((q - mc).abs() < 1e-4, "quadrature {q} vs mc {mc}");
        assert!(q > 0.02);
    }

    #[test]
    fn no_effect_gives_zero_delta() {
        for &(b0, s) in &[(-3.0, 0.0), (-1.0, 0.5), (2.0, 2.0)] {
            let p = ModelParams::new(b0, 0.0, s).unwrap();
            assert_eq!(estimand_delta(&p, &rule()).unwrap(), 0.0);
        }
    }

    #[test]
    fn scenario_three_delta_by_construction() {
        let r = rule();
        let sigma = sigma_from_icc(0.05).unwrap();
        let b0 = solve_intercept(0.02, sigma, &r).unwrap();
        let b1 = solve_slope(b0, 0.05, sigma, &r).unwrap();
        let p = ModelParams::new(b0, b1, sigma).unwrap();
        let d = estimand_delta(&p, &r).unwrap();
        assert!((d - 0.03).abs() < 1e-6, "delta {d}");
        // independent oracle
        let (m1, se1) = mc_marginal(b0 + b1, sigma, 4_000_000, 3);
        let (m0, se0) = mc_marginal(b0, sigma, 4_000_000, 4);
        assert!(((m1 - m0) - 0.03).abs() < 3.0 * (se0 * se0 + se1 * se1).sqrt());
    }

    #[test]
    fn solve_intercept_cases() {
        let r = rule();
        assert_eq!(solve_intercept(0.02, 0.0, &r).unwrap(), logit(0.02));
        assert!((logit(0.02) - (-3.89182)).abs() < 1e-5);
        for &s in &[0.3, 1.0, 2.0] {
            assert_eq!(solve_intercept(0.5, s, &r).unwrap(), 0.0);
        }
        let sigma = 0.41612;
        let b0 = solve_intercept(0.02, sigma, &r).unwrap();
        assert!(b0 < logit(0.02));
        let p = ModelParams::new(b0, 0.0, sigma).unwrap();
        assert!((marginal_mean(&p, 0, &r).unwrap() - 0.02).abs() < 1e-10);
        let (mc, se) = mc_marginal(b0, sigma, 10_000_000, 5);
        assert!((mc - 0.02).abs() < 3.0 * se, "mc {mc} se {se}");
    }

    #[test]
    fn solve_intercept_rejects_bad_rate() {
        assert!(solve_intercept(0.0, 0.5, &rule()).is_err());
        assert!(solve_intercept(1.0, 0.5, &rule()).is_err());
        assert!(solve_intercept(0.3, f64::NAN, &rule()).is_err());
    }

    #[test]
    fn icc_conversions() {
        assert_eq!(sigma_from_icc(0.0).unwrap(), 0.0);
        assert!((sigma_from_icc(0.5).unwrap() - LOGISTIC_VARIANCE.sqrt()).abs() < 1e-15);
        assert!((sigma_from_icc(0.5).unwrap() - 1.81380).abs() < 1e-5);
        assert!((sigma_from_icc(0.05).unwrap() - 0.41612).abs() < 1e-5);
        assert!(sigma_from_icc(1.0).is_err());
        assert!(sigma_from_icc(-0.1).is_err());
        for i in 0..100 {
            let icc = i as f64 / 100.0;
            let back = icc_from_sigma(sigma_from_icc(icc).unwrap());
            assert!((back - icc).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let p = ModelParams { beta0: f64::NAN, beta1: 0.0, sigma: 1.0 };
        assert!(marginal_mean(&p, 0, &rule()).is_err());
        assert!(ModelParams::new(0.0, f64::INFINITY, 1.0).is_err());
        assert!(ModelParams::new(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn monotone_in_intercept() {
        let r = rule();
        for &s in &[0.0, 0.4, 1.0, 1.5, 3.0] {
            let mut prev = 0.0;
            for i in -60..=60 {
                let p = ModelParams::new(i as f64 * 0.1, 0.0, s).unwrap();
                let v = marginal_mean(&p, 0, &r).unwrap();
                assert!(v > prev, "sigma {s} b0 {}", i as f64 * 0.1);
                prev = v;
            }
        }
    }

    #[test]
    fn jensen_excess_below_half() {
        let r = rule();
        for &p0 in &[0.01, 0.02, 0.2, 0.45] {
            for &s in &[0.1, 0.5, 1.2, 2.5] {
                let p = ModelParams::new(logit(p0), 0.0, s).unwrap();
                assert!(marginal_mean(&p, 0, &r).unwrap() > p0);
            }
        }
    }

    #[test]
    fn order_doubling_stability() {
        let r30 = QuadratureRule::gauss_hermite(30).unwrap();
        let r60 = QuadratureRule::gauss_hermite(60).unwrap();
        for i in 0..=24 {
            let b0 = -6.0 + 0.5 * i as f64;
            for j in 0..=30 {
                let s = 0.1 * j as f64;
                let p = ModelParams::new(b0, 0.0, s).unwrap();
                let a = marginal_mean(&p, 0, &r30).unwrap();
                let b = marginal_mean(&p, 0, &r60).unwrap();
                assert!((a - b).abs() < 1e-10, "b0 {b0} sigma {s}: {}", (a - b).abs());
            }
        }
    }

    #[test]
    fn branches_agree_at_switch() {
        let r = rule();
        for &b0 in &[-5.0, -2.0, 0.3, 4.0] {
            let below = logistic_normal_mean(b0, 1.0, &r);
            let above = logistic_normal_mean(b0, 1.0 + 1e-12, &r);
            assert!((below - above).abs() < 1e-11);
        }
    }
}
