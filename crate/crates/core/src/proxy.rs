//! Closed-form proxy to the sampling distribution of posterior probabilities.
//!
//! Under the large-cluster-count normal approximation, the estimand's MLE at
//! `c` clusters is `N(delta_r, Lambda / c)`. Drawing it by CDF inversion from a
//! fixed `u_r` and plugging it into the normal posterior gives a deterministic
//! function of `c` whose logit grows linearly, with the slope returned by
//! [`theorem1_slope`].

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{draw_theta, PsiModel, ZetaProcess};
use crate::error::{Error, Result};
use crate::estimand::{delta_unchecked, Hypothesis, ModelParams};
use crate::gcomp::TauValue;
use crate::numeric::{expit, norm_log_interval, norm_logcdf, norm_quantile, QuadratureRule};
use crate::rng::{substream, SimRng};

/// Jackknife groups used for the standard error of `Lambda`.
const JACKKNIFE_GROUPS: usize = 20;
/// Condition number above which the per-cluster information is declared singular.
const MAX_CONDITION: f64 = 1e12;
/// Relative finite-difference step.
const FD_STEP: f64 = 1e-5;
/// Gauss-Hermite order for per-cluster marginal likelihoods.
const CLUSTER_QUADRATURE_ORDER: usize = 64;

/// Per-cluster asymptotic variance of the estimand's MLE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaEstimate {
    pub lambda: f64,
    pub n_mc: usize,
    pub se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyDraw {
    pub delta_r: f64,
    pub lambda: f64,
    pub u: f64,
    pub delta_hat: f64,
    pub tau: TauValue,
}

/// Coordinates of the information matrix: `(beta0, beta1, log sigma)`, or
/// just the coefficients when `sigma = 0`.
fn coordinates(params: &ModelParams) -> Vec<f64> {
    if params.sigma > 0.0 {
        vec![params.beta0, params.beta1, params.sigma.ln()]
    } else {
        vec![params.beta0, params.beta1]
    }
}

fn from_coordinates(x: &[f64]) -> ModelParams {
    ModelParams {
        beta0: x[0],
        beta1: x[1],
        sigma: if x.len() == 3 { x[2].exp() } else { 0.0 },
    }
}

/// Log marginal likelihood of one cluster, up to the binomial coefficient.
fn cluster_loglik(params: &ModelParams, n: u32, y: u32, arm: u8, rule: &QuadratureRule) -> f64 {
    let eta = params.eta(arm);
    let (yf, nf) = (f64::from(y), f64::from(n - y));
    let term = |e: f64| -> f64 {
        // log p = -log(1 + e^-e), log(1 - p) = -log(1 + e^e)
        -yf * crate::numeric::log1p_exp(-e) - nf * crate::numeric::log1p_exp(e)
    };
    if params.sigma == 0.0 {
        return term(eta);
    }
    let logs: Vec<f64> = rule
        .nodes()
        .iter()
        .zip(rule.weights())
        .map(|(&x, &w)| w.ln() + term(eta + params.sigma * x))
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

fn fd_steps(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| FD_STEP * v.abs().max(1.0)).collect()
}

/// Central-difference gradient of `f` at `x`.
fn gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
    let steps = fd_steps(x);
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + steps[k];
            let up = f(&probe);
            probe[k] = x[k] - steps[k];
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * steps[k])
        })
        .collect()
}

fn quadratic_form(info: &DMatrix<f64>, grad: &DVector<f64>) -> Result<f64> {
    let eig = info.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularInformation { condition });
    }
    let inv = info
        .clone()
        .cholesky()
        .ok_or(Error::SingularInformation { condition })?
        .inverse();
    Ok((grad.transpose() * inv * grad)[(0, 0)])
}

/// Estimates `Lambda = grad(delta)' I1^-1 grad(delta)`.
///
/// `I1` is the average outer product of per-cluster scores over `n_mc`
/// simulated clusters, with the cluster effect integrated out of each
/// cluster's likelihood. Clusters alternate between arms. When `sigma = 0`
/// the variance component is treated as known and only the coefficient block
/// enters. The standard error is a delete-one-group jackknife over 20 groups.
pub fn estimate_lambda(
    params: &ModelParams,
    zeta: &ZetaProcess,
    n_mc: usize,
    rule: &QuadratureRule,
    rng: &mut SimRng,
) -> Result<LambdaEstimate> {
    params.validate()?;
    zeta.cluster_size.validate()?;
    if n_mc < JACKKNIFE_GROUPS {
        return Err(Error::invalid(format!("n_mc must be >= {JACKKNIFE_GROUPS}, got {n_mc}")));
    }
    let x0 = coordinates(params);
    let d = x0.len();
    let cluster_rule = QuadratureRule::gauss_hermite(CLUSTER_QUADRATURE_ORDER)?;
    let grad = DVector::from_vec(gradient(|x| delta_unchecked(&from_coordinates(x), rule), &x0));

    let root = rng.next_u64();
    let group_sums: Vec<(DMatrix<f64>, usize)> = (0..JACKKNIFE_GROUPS)
        .into_par_iter()
        .map(|g| {
            let size = n_mc / JACKKNIFE_GROUPS + usize::from(g < n_mc % JACKKNIFE_GROUPS);
            let mut rng = substream(root, "lambda", &[g as u64]);
            let mut cache: HashMap<(u32, u32, u8), DVector<f64>> = HashMap::new();
            let mut sum = DMatrix::zeros(d, d);
            for i in 0..size {
                let n = zeta.cluster_size.sample(&mut rng);
                let arm = (i % 2) as u8;
                let z: f64 = StandardNormal.sample(&mut rng);
                let p = expit(params.eta(arm) + params.sigma * z);
                let y = Binomial::new(u64::from(n), p).expect("valid binomial").sample(&mut rng) as u32;
                let score = cache.entry((n, y, arm)).or_insert_with(|| {
                    DVector::from_vec(gradient(
                        |x| cluster_loglik(&from_coordinates(x), n, y, arm, &cluster_rule),
                        &x0,
                    ))
                });
                sum += &*score * score.transpose();
            }
            (sum, size)
        })
        .collect();

    let total: DMatrix<f64> = group_sums.iter().fold(DMatrix::zeros(d, d), |acc, (s, _)| acc + s);
    let lambda = quadratic_form(&(&total / n_mc as f64), &grad)?;
    let leave_out: Vec<f64> = group_sums
        .iter()
        .map(|(s, size)| quadratic_form(&((&total - s) / (n_mc - size) as f64), &grad))
        .collect::<Result<_>>()?;
    let g = JACKKNIFE_GROUPS as f64;
    let mean = leave_out.iter().sum::<f64>() / g;
    let se = ((g - 1.0) / g * leave_out.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sqrt();
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::SingularInformation { condition: f64::INFINITY });
    }
    Ok(LambdaEstimate { lambda, n_mc, se })
}

fn check_lambda_c(lambda: f64, c: u64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    if c == 0 {
        return Err(Error::invalid("c must be >= 1"));
    }
    Ok(())
}

/// MLE draw by CDF inversion: `delta_r + Phi^-1(u) sqrt(Lambda / c)`.
pub fn mle_draw(delta_r: f64, lambda: f64, c: u64, u: f64) -> Result<f64> {
    check_lambda_c(lambda, c)?;
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::invalid(format!("u must lie in (0, 1), got {u}")));
    }
    Ok(delta_r + norm_quantile(u) * (lambda / c as f64).sqrt())
}

/// Proxy posterior probability of the hypothesis at `c` clusters.
///
/// Evaluated from log tail masses, so the logit is finite for any finite
/// standardized distance to the endpoints.
pub fn proxy_tau(delta_hat: f64, lambda: f64, c: u64, hyp: &Hypothesis) -> Result<TauValue> {
    check_lambda_c(lambda, c)?;
    let s = (lambda / c as f64).sqrt();
    let a = (hyp.lower() - delta_hat) / s;
    let b = (hyp.upper() - delta_hat) / s;
    let inside = norm_log_interval(a, b);
    let (below, above) = (norm_logcdf(a), norm_logcdf(-b));
    let hi = below.max(above);
    let outside = hi + ((below - hi).exp() + (above - hi).exp()).ln();
    Ok(TauValue::from_logit(inside - outside))
}

/// Limiting derivative of `logit(tau^(c))` with respect to `c`.
pub fn theorem1_slope(delta_r: f64, lambda: f64, hyp: &Hypothesis) -> f64 {
    let dist = [hyp.lower(), hyp.upper()]
        .iter()
        .filter(|e| e.is_finite())
        .map(|e| (e - delta_r).powi(2) / lambda)
        .fold(f64::INFINITY, f64::min);
    if dist == 0.0 {
        return 0.0;
    }
    let sign = if hyp.contains(delta_r) { 0.5 } else { -0.5 };
    sign * dist
}

/// Settings for [`proxy_sample`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyConfig {
    /// Simulated clusters per `Lambda` estimate for degenerate models.
    pub n_mc: usize,
    /// Simulated clusters per repetition for sampler models.
    pub n_mc_sampler: usize,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            n_mc: 100_000,
            n_mc_sampler: 1_000,
        }
    }
}

/// Proxy draws for `m` repetitions at `c` clusters.
///
/// `Lambda` is estimated once for a degenerate model and per repetition
/// otherwise.
pub fn proxy_sample(
    psi: &PsiModel,
    zeta: &ZetaProcess,
    c: u64,
    m: usize,
    hyp: &Hypothesis,
    cfg: &ProxyConfig,
    rule: &QuadratureRule,
    rng: &mut SimRng,
) -> Result<Vec<ProxyDraw>> {
    if m == 0 {
        return Err(Error::invalid("m must be >= 1"));
    }
    let root = rng.next_u64();
    let cached = if psi.is_degenerate() {
        let theta = draw_theta(psi, rng);
        let est = estimate_lambda(&theta, zeta, cfg.n_mc, rule, &mut substream(root, "proxy-lambda", &[]))?;
        Some((theta, est.lambda))
    } else {
        None
    };
    (0..m)
        .map(|r| {
            let mut rng = substream(root, "proxy", &[r as u64]);
            let (theta, lambda) = match cached {
                Some(v) => v,
                None => {
                    let theta = draw_theta(psi, &mut rng);
                    let est = estimate_lambda(&theta, zeta, cfg.n_mc_sampler, rule, &mut rng)?;
                    (theta, est.lambda)
                }
            };
            let delta_r = delta_unchecked(&theta, rule);
            // Open interval, so the quantile stays finite.
            let u = loop {
                let u: f64 = rng.random();
                if u > 0.0 {
                    break u;
                }
            };
            let delta_hat = mle_draw(delta_r, lambda, c, u)?;
            let tau = proxy_tau(delta_hat, lambda, c, hyp)?;
            Ok(ProxyDraw { delta_r, lambda, u, delta_hat, tau })
        })
        .collect()
}

/// One row of the slope-convergence table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub delta_r: f64,
    pub lambda: f64,
    pub u: f64,
    pub c: u64,
    pub numeric_slope: f64,
    pub theorem_slope: f64,
    /// `|numeric / theorem - 1|`; absolute difference when the theorem slope is zero.
    pub rel_error: f64,
}

/// Centered difference of `logit(tau^(c))` at `c` with unit spacing.
pub fn numeric_slope(delta_r: f64, lambda: f64, u: f64, c: u64, hyp: &Hypothesis) -> Result<f64> {
    if c < 2 {
        return Err(Error::invalid("c must be >= 2 for a centered difference"));
    }
    let at = |c: u64| -> Result<f64> { Ok(proxy_tau(mle_draw(delta_r, lambda, c, u)?, lambda, c, hyp)?.logit_tau) };
    Ok((at(c + 1)? - at(c - 1)?) / 2.0)
}

pub fn convergence_table(
    points: &[(f64, f64, f64)],
    cs: &[u64],
    hyp: &Hypothesis,
) -> Result<Vec<ConvergenceRow>> {
    let mut rows = Vec::with_capacity(points.len() * cs.len());
    for &(delta_r, lambda, u) in points {
        let theorem = theorem1_slope(delta_r, lambda, hyp);
        for &c in cs {
            let numeric = numeric_slope(delta_r, lambda, u, c, hyp)?;
            let rel_error = if theorem == 0.0 {
                numeric.abs()
            } else {
                (numeric / theorem - 1.0).abs()
            };
            rows.push(ConvergenceRow {
                delta_r,
                lambda,
                u,
                c,
                numeric_slope: numeric,
                theorem_slope: theorem,
                rel_error,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::build_theta_for_scenario;
    use crate::numeric::{logit, norm_cdf};

    fn one_sided() -> Hypothesis {
        Hypothesis::below(0.04).unwrap()
    }

    #[test]
    fn mle_draw_cases() {
        assert_eq!(mle_draw(0.013, 0.5, 10, 0.5).unwrap(), 0.013);
        let v = mle_draw(0.0, 1.0, 100, 0.975).unwrap();
        assert!((v - 0.195_996_398_454_005_4).abs() < 1e-12);
        let d1 = mle_draw(0.02, 0.3, 50, 0.8).unwrap() - 0.02;
        let d4 = mle_draw(0.02, 0.3, 200, 0.8).unwrap() - 0.02;
        assert!((d1 / d4 - 2.0).abs() < 1e-12);
        assert!(mle_draw(0.0, 1.0, 10, 0.0).is_err());
        assert!(mle_draw(0.0, 1.0, 10, 1.0).is_err());
    }

    #[test]
    fn proxy_tau_cases() {
        let hyp = one_sided();
        assert_eq!(proxy_tau(0.04, 0.7, 30, &hyp).unwrap().tau, 0.5);
        let t = proxy_tau(0.0, 1.0, 100, &hyp).unwrap();
        assert!((t.tau - 0.655_421_741_610_324_2).abs() < 1e-14);
        assert!((t.logit_tau - logit(norm_cdf(0.4))).abs() < 1e-12);
        let mut prev = 0.0;
        for c in [10, 100, 1000, 10_000, 100_000] {
            let t = proxy_tau(0.02, 0.025, c, &hyp).unwrap().logit_tau;
            assert!(t > prev);
            prev = t;
        }
    }

    #[test]
    fn proxy_tau_decreasing_in_estimate() {
        let hyp = one_sided();
        let mut prev = f64::INFINITY;
        for i in 0..400 {
            let t = proxy_tau(-0.2 + 0.001 * i as f64, 0.02, 500, &hyp).unwrap().logit_tau;
            assert!(t < prev);
            prev = t;
        }
    }

    #[test]
    fn slope_cases() {
        let hyp = one_sided();
        assert_eq!(theorem1_slope(0.04, 0.0016, &hyp), 0.0);
        assert!((theorem1_slope(0.0, 0.0016, &hyp) - 0.5).abs() < 1e-12);
        assert!((theorem1_slope(0.08, 0.0016, &hyp) + 0.5).abs() < 1e-12);
        let two = Hypothesis::new(-0.01, 0.04).unwrap();
        assert!((theorem1_slope(0.0, 0.0016, &two) - 0.5 * 0.0001 / 0.0016).abs() < 1e-12);
    }

    #[test]
    fn slope_convergence() {
        let hyp = one_sided();
        let rows = convergence_table(&[(0.0, 0.025, 0.1), (0.1, 0.025, 0.9)], &[1_000, 10_000, 100_000], &hyp).unwrap();
        for pair in rows.chunks(3) {
            assert!(pair[2].rel_error < pair[0].rel_error);
            assert!(pair[2].rel_error < 0.02);
        }
        let boundary = convergence_table(&[(0.04, 0.025, 0.3)], &[100_000], &hyp).unwrap();
        assert_eq!(boundary[0].theorem_slope, 0.0);
        assert!(boundary[0].numeric_slope.abs() < 1e-8);
    }

    #[test]
    fn lambda_matches_two_sample_variance() {
        let rule = QuadratureRule::default();
        let theta = build_theta_for_scenario(0.02, 0.06, 0.0, &rule).unwrap();
        let est = estimate_lambda(&theta, &ZetaProcess::fixed(1), 200_000, &rule, &mut substream(1, "l", &[])).unwrap();
        let exact = 2.0 * (0.02 * 0.98 + 0.06 * 0.94);
        assert!((est.lambda - exact).abs() < 3.0 * est.se, "{est:?} vs {exact}");
        assert!(est.se > 0.0);
    }

    #[test]
    fn lambda_positive_with_clustering() {
        let rule = QuadratureRule::default();
        let theta = build_theta_for_scenario(0.02, 0.02, 0.05, &rule).unwrap();
        let est = estimate_lambda(&theta, &ZetaProcess::default(), 20_000, &rule, &mut substream(2, "l", &[])).unwrap();
        assert!(est.lambda > 0.0 && est.se >= 0.0);
    }

    #[test]
    fn cluster_loglik_matches_direct_sum() {
        let rule = QuadratureRule::gauss_hermite(64).unwrap();
        let p = ModelParams::new(-1.0, 0.4, 0.8).unwrap();
        let direct = rule
            .expect(|x| {
                let q = expit(p.beta0 + p.beta1 + p.sigma * x);
                q.powi(2) * (1.0 - q).powi(3)
            })
            .ln();
        assert!((cluster_loglik(&p, 5, 2, 1, &rule) - direct).abs() < 1e-12);
    }

    #[test]
    fn proxy_sample_deterministic() {
        let rule = QuadratureRule::default();
        let theta = build_theta_for_scenario(0.02, 0.02, 0.01, &rule).unwrap();
        let psi = PsiModel::degenerate("s1", theta);
        let cfg = ProxyConfig { n_mc: 2_000, ..ProxyConfig::default() };
        let run = || proxy_sample(&psi, &ZetaProcess::default(), 100, 50, &one_sided(), &cfg, &rule, &mut substream(3, "p", &[])).unwrap();
        assert_eq!(run(), run());
    }
}
