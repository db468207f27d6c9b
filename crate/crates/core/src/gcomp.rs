//! Bayesian G-computation of the marginal risk difference and the posterior
//! probability of the alternative.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimand::{delta_unchecked, Hypothesis};
use crate::glmm::PosteriorDraws;
use crate::numeric::{expit, norm_log_interval, norm_logcdf, QuadratureRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginalizationMethod {
    /// Integrate each draw over its fitted normal law of cluster effects.
    ParametricQuadrature,
    /// Reweight each draw's fitted cluster effects with Dirichlet(1, ..., 1) weights.
    DirichletReweight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum Bandwidth {
    Silverman,
    Fixed { h: f64 },
}

/// Fallback kernel width when every draw is identical.
pub const DEGENERATE_BANDWIDTH: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcompConfig {
    pub method: MarginalizationMethod,
    pub quadrature_order: usize,
    /// Weight vectors averaged per draw on the Dirichlet path.
    pub dirichlet_reweights: usize,
    pub bandwidth: Bandwidth,
}

impl Default for GcompConfig {
    fn default() -> Self {
        Self {
            method: MarginalizationMethod::ParametricQuadrature,
            quadrature_order: 30,
            dirichlet_reweights: 1,
            bandwidth: Bandwidth::Silverman,
        }
    }
}

impl GcompConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dirichlet_reweights == 0 {
            return Err(Error::invalid("dirichlet_reweights must be >= 1"));
        }
        if let Bandwidth::Fixed { h } = self.bandwidth {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::invalid("fixed bandwidth must be positive"));
            }
        }
        QuadratureRule::gauss_hermite(self.quadrature_order).map(|_| ())
    }
}

/// Posterior draws of the marginal risk difference.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaPosterior {
    pub draws: Vec<f64>,
    pub method: MarginalizationMethod,
}

impl DeltaPosterior {
    pub fn mean(&self) -> f64 {
        self.draws.iter().sum::<f64>() / self.draws.len() as f64
    }

    /// Sample standard deviation; zero for fewer than two draws.
    pub fn sd(&self) -> f64 {
        sample_sd(&self.draws)
    }

    /// Empirical quantile with linear interpolation between order statistics.
    pub fn quantile(&self, p: f64) -> f64 {
        let mut v = self.draws.clone();
        v.sort_by(f64::total_cmp);
        interpolated_quantile(&v, p)
    }
}

/// Posterior probability of the alternative with its finite logit.
///
/// Both fields are derived from the same log-odds, so `logit_tau` is exact and
/// `tau == expit(logit_tau)` bitwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauValue {
    pub tau: f64,
    pub logit_tau: f64,
}

impl TauValue {
    /// Builds from a finite logit.
    pub fn from_logit(logit_tau: f64) -> Self {
        Self {
            tau: expit(logit_tau),
            logit_tau,
        }
    }
}

pub(crate) fn sample_sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Quantile of sorted data, type-7 interpolation.
pub(crate) fn interpolated_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Marginalizes every draw over `Normal(0, sigma_s^2)`.
pub fn marginalize_parametric(draws: &PosteriorDraws, rule: &QuadratureRule) -> DeltaPosterior {
    let out = (0..draws.len())
        .map(|s| delta_unchecked(&draws.params(s), rule))
        .collect();
    DeltaPosterior {
        draws: out,
        method: MarginalizationMethod::ParametricQuadrature,
    }
}

/// A flat Dirichlet weight vector of length `c`.
pub fn dirichlet_weights<R: Rng + ?Sized>(c: usize, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..c).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Marginalizes every draw over its own fitted cluster effects, reweighted by
/// `n_rew` flat Dirichlet vectors.
pub fn marginalize_dirichlet<R: Rng + ?Sized>(
    draws: &PosteriorDraws,
    n_rew: usize,
    rng: &mut R,
) -> Result<DeltaPosterior> {
    if draws.c < 2 {
        return Err(Error::invalid("Dirichlet reweighting needs at least two clusters"));
    }
    if n_rew == 0 {
        return Err(Error::invalid("n_rew must be >= 1"));
    }
    let c = draws.c;
    let mut contrast = vec![0.0; c];
    let mut weights = vec![0.0; c];
    let mut out = Vec::with_capacity(draws.len());
    for s in 0..draws.len() {
        let (b0, b1) = (draws.beta0[s], draws.beta1[s]);
        for (d, &w) in contrast.iter_mut().zip(draws.effects(s)) {
            *d = expit(b0 + b1 + w) - expit(b0 + w);
        }
        let mut acc = 0.0;
        for _ in 0..n_rew {
            let mut total = 0.0;
            for v in &mut weights {
                *v = Exp1.sample(rng);
                total += *v;
            }
            acc += weights.iter().zip(&contrast).map(|(w, d)| w * d).sum::<f64>() / total;
        }
        out.push(acc / n_rew as f64);
    }
    Ok(DeltaPosterior {
        draws: out,
        method: MarginalizationMethod::DirichletReweight,
    })
}

/// Silverman's rule of thumb; falls back to the standard deviation when the
/// IQR vanishes and to [`DEGENERATE_BANDWIDTH`] when every draw is identical.
pub fn silverman_bandwidth(draws: &[f64]) -> f64 {
    let (min, max) = draws
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &d| (a.min(d), b.max(d)));
    let sd = sample_sd(draws);
    if min == max || !(sd > 0.0) {
        return DEGENERATE_BANDWIDTH;
    }
    let mut v = draws.to_vec();
    v.sort_by(f64::total_cmp);
    let iqr = interpolated_quantile(&v, 0.75) - interpolated_quantile(&v, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (draws.len() as f64).powf(-0.2)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Kernel-smoothed posterior probability that the estimand lies inside the
/// hypothesis interval.
///
/// Inside and outside masses are accumulated separately in log space, so the
/// logit stays finite however far the draws sit from either endpoint.
pub fn tau_from_delta(dp: &DeltaPosterior, hyp: &Hypothesis, bandwidth: Bandwidth) -> Result<TauValue> {
    if dp.draws.is_empty() {
        return Err(Error::invalid("no posterior draws"));
    }
    let h = match bandwidth {
        Bandwidth::Silverman => silverman_bandwidth(&dp.draws),
        Bandwidth::Fixed { h } => h,
    };
    let (lo, hi) = (hyp.lower(), hyp.upper());
    let mut inside = Vec::with_capacity(dp.draws.len());
    let mut outside = Vec::with_capacity(dp.draws.len());
    for &d in &dp.draws {
        let a = (lo - d) / h;
        let b = (hi - d) / h;
        inside.push(norm_log_interval(a, b));
        // Phi(a) + Phi(-b)
        let below = norm_logcdf(a);
        let above = norm_logcdf(-b);
        outside.push(log_sum_exp(&[below, above]));
    }
    let logit_tau = log_sum_exp(&inside) - log_sum_exp(&outside);
    if !logit_tau.is_finite() {
        return Err(Error::invalid(format!("posterior probability logit is {logit_tau}")));
    }
    Ok(TauValue::from_logit(logit_tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimand::{estimand_delta, ModelParams};
    use crate::glmm::AcceptRates;
    use crate::numeric::{logit, norm_cdf};
    use crate::rng::substream;
    use proptest::{prop_assert, proptest};
    use rand_distr::StandardNormal;

    fn draws_from(params: &[ModelParams], c: usize, w: Vec<f64>) -> PosteriorDraws {
        PosteriorDraws {
            beta0: params.iter().map(|p| p.beta0).collect(),
            beta1: params.iter().map(|p| p.beta1).collect(),
            sigma: params.iter().map(|p| p.sigma).collect(),
            w,
            c,
            accept: AcceptRates { pair: 0.0, log_sigma: 0.0, effects: 0.0 },
            rhat: None,
        }
    }

    fn dp(draws: Vec<f64>) -> DeltaPosterior {
        DeltaPosterior { draws, method: MarginalizationMethod::ParametricQuadrature }
    }

    #[test]
    fn identical_draws_give_identical_deltas() {
        let p = ModelParams::new(-3.0, 0.8, 0.7).unwrap();
        let rule = QuadratureRule::default();
        let out = marginalize_parametric(&draws_from(&[p; 5], 0, vec![]), &rule);
        let expected = estimand_delta(&p, &rule).unwrap();
        assert!(out.draws.iter().all(|&d| d == expected));
    }

    #[test]
    fn zero_slope_gives_zero_delta() {
        let ps: Vec<ModelParams> = (0..10).map(|i| ModelParams::new(-4.0 + 0.3 * i as f64, 0.0, 0.1 * i as f64).unwrap()).collect();
        let out = marginalize_parametric(&draws_from(&ps, 0, vec![]), &QuadratureRule::default());
        assert!(out.draws.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn parametric_matches_monte_carlo() {
        // One shared set of normal draws serves as the oracle for every point.
        let mut rng = substream(11, "oracle", &[]);
        let z: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut prng = substream(12, "points", &[]);
        let ps: Vec<ModelParams> = (0..100)
            .map(|_| {
                ModelParams::new(
                    prng.random_range(-5.0..0.0),
                    prng.random_range(-1.0..1.5),
                    prng.random_range(0.0..2.0),
                )
                .unwrap()
            })
            .collect();
        let out = marginalize_parametric(&draws_from(&ps, 0, vec![]), &QuadratureRule::default());
        for (p, d) in ps.iter().zip(&out.draws) {
            let mc = z
                .iter()
                .map(|&x| expit(p.beta0 + p.beta1 + p.sigma * x) - expit(p.beta0 + p.sigma * x))
                .sum::<f64>()
                / z.len() as f64;
            assert!((mc - d).abs() < 1e-3, "{p:?}: {d} vs {mc}");
        }
    }

    #[test]
    fn dirichlet_constant_integrand() {
        let p = ModelParams::new(-2.0, 0.5, 1.0).unwrap();
        let draws = draws_from(&[p; 4], 6, vec![0.0; 24]);
        let out = marginalize_dirichlet(&draws, 3, &mut substream(1, "d", &[])).unwrap();
        let expected = expit(-1.5) - expit(-2.0);
        assert!(out.draws.iter().all(|&d| (d - expected).abs() < 1e-15));
    }

    #[test]
    fn dirichlet_weights_on_simplex() {
        let mut rng = substream(2, "d", &[]);
        for c in [2, 5, 100] {
            for _ in 0..200 {
                let w = dirichlet_weights(c, &mut rng);
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(w.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn dirichlet_mean_is_cluster_average() {
        let p = ModelParams::new(-2.0, 0.9, 1.0).unwrap();
        let w = vec![-1.2, -0.3, 0.0, 0.4, 1.5];
        let reps = 10_000;
        let draws = draws_from(&vec![p; reps], 5, w.iter().cycle().take(5 * reps).copied().collect());
        let out = marginalize_dirichlet(&draws, 1, &mut substream(3, "d", &[])).unwrap();
        let target = w.iter().map(|&x| expit(-1.1 + x) - expit(-2.0 + x)).sum::<f64>() / 5.0;
        let se = out.sd() / (reps as f64).sqrt();
        assert!((out.mean() - target).abs() < 3.0 * se, "{} vs {target}", out.mean());
    }

    #[test]
    fn dirichlet_rejects_single_cluster() {
        let p = ModelParams::new(0.0, 0.0, 1.0).unwrap();
        assert!(marginalize_dirichlet(&draws_from(&[p], 1, vec![0.0]), 1, &mut substream(0, "d", &[])).is_err());
    }

    #[test]
    fn deep_interior_mass() {
        let hyp = Hypothesis::below(0.04).unwrap();
        let h = 0.001;
        let draws: Vec<f64> = (0..50).map(|i| 0.04 - 10.0 * h - 0.0001 * i as f64).collect();
        let t = tau_from_delta(&dp(draws), &hyp, Bandwidth::Fixed { h }).unwrap();
        assert!(t.tau > 1.0 - 1e-6);
        assert!(t.logit_tau.is_finite());
    }

    #[test]
    fn symmetric_draws_give_half() {
        let hyp = Hypothesis::below(0.04).unwrap();
        let draws: Vec<f64> = (1..=100).flat_map(|i| [0.04 + 0.001 * i as f64, 0.04 - 0.001 * i as f64]).collect();
        let t = tau_from_delta(&dp(draws), &hyp, Bandwidth::Silverman).unwrap();
        assert!((t.tau - 0.5).abs() < 1e-10);
    }

    #[test]
    fn normal_posterior_oracle() {
        let mut rng = substream(5, "tau", &[]);
        let draws: Vec<f64> = (0..2000).map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.02 + 0.01 * z
        }).collect();
        let t = tau_from_delta(&dp(draws), &Hypothesis::below(0.04).unwrap(), Bandwidth::Silverman).unwrap();
        assert!((t.tau - norm_cdf(2.0)).abs() < 0.005, "{}", t.tau);
    }

    #[test]
    fn far_tails_keep_finite_logits() {
        let hyp = Hypothesis::below(0.04).unwrap();
        let above = tau_from_delta(&dp(vec![0.5, 0.6]), &hyp, Bandwidth::Fixed { h: 1e-4 }).unwrap();
        assert!(above.logit_tau.is_finite() && above.logit_tau < -1e6);
        assert!(above.tau > 0.0 || above.logit_tau < -745.0);
        let below = tau_from_delta(&dp(vec![-0.5, -0.6]), &hyp, Bandwidth::Fixed { h: 1e-4 }).unwrap();
        assert!(below.logit_tau.is_finite() && below.logit_tau > 1e6);
    }

    #[test]
    fn identical_draws_use_fallback_bandwidth() {
        assert_eq!(silverman_bandwidth(&[0.1; 10]), DEGENERATE_BANDWIDTH);
        let hyp = Hypothesis::below(0.04).unwrap();
        let t = tau_from_delta(&dp(vec![0.04 - DEGENERATE_BANDWIDTH; 10]), &hyp, Bandwidth::Silverman).unwrap();
        assert!((t.tau - norm_cdf(1.0)).abs() < 1e-12);
    }

    #[test]
    fn small_bandwidth_tends_to_empirical_fraction() {
        let draws: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let hyp = Hypothesis::new(0.205, 0.705).unwrap();
        let t = tau_from_delta(&dp(draws), &hyp, Bandwidth::Fixed { h: 1e-6 }).unwrap();
        assert!((t.tau - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tau_value_is_self_consistent() {
        for &l in &[-5.0, -2.0, 0.0, 1.5, 5.0] {
            let t = TauValue::from_logit(l);
            assert!((logit(t.tau) - l).abs() < 1e-12);
        }
        for &l in &[-700.0, -30.0, 30.0] {
            let t = TauValue::from_logit(l);
            assert!(t.tau > 0.0 && t.tau <= 1.0 && t.logit_tau == l);
        }
    }

    proptest! {
        #[test]
        fn widening_never_decreases_tau(
            draws in proptest::collection::vec(-0.2f64..0.2, 2..60),
            lo in -0.3f64..0.0, hi in 0.0f64..0.3, widen in 0.0f64..0.2,
        ) {
            let d = dp(draws);
            let narrow = tau_from_delta(&d, &Hypothesis::new(lo, hi).unwrap(), Bandwidth::Silverman).unwrap();
            let wide = tau_from_delta(&d, &Hypothesis::new(lo - widen, hi + widen).unwrap(), Bandwidth::Silverman).unwrap();
            prop_assert!(wide.logit_tau >= narrow.logit_tau - 1e-9);
        }

        #[test]
        fn shift_equivariance(
            draws in proptest::collection::vec(-0.2f64..0.2, 2..60),
            upper in -0.1f64..0.1, shift in -0.5f64..0.5,
        ) {
            let base = tau_from_delta(&dp(draws.clone()), &Hypothesis::below(upper).unwrap(), Bandwidth::Fixed { h: 0.01 }).unwrap();
            let shifted = tau_from_delta(
                &dp(draws.iter().map(|d| d + shift).collect()),
                &Hypothesis::below(upper + shift).unwrap(),
                Bandwidth::Fixed { h: 0.01 },
            ).unwrap();
            prop_assert!((base.tau - shifted.tau).abs() < 1e-12);
        }
    }
}
