//! Posterior sampling for the logistic random-intercept model.
//!
//! Blockwise adaptive random-walk Metropolis over
//!
//! 1. `(beta0, beta1)` jointly, proposing independent moves of the two arm
//!    intercepts `beta0` and `beta0 + beta1`;
//! 2. `log sigma`;
//! 3. each cluster effect, one scalar update per cluster.
//!
//! Cluster effects are stored non-centered, `w_j = sigma * z_j`, so a move of
//! `log sigma` rescales every `w_j`. In `(beta, log sigma, z)` coordinates the
//! target is `log_joint(beta, sigma, sigma * z) + (c + 1) log sigma`; the extra
//! terms are the Jacobians of both transformations. Proposal scales adapt by
//! Robbins-Monro during burn-in and are frozen afterwards.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datagen::TrialData;
use crate::error::{Error, Result};
use crate::estimand::ModelParams;
use crate::numeric::log1p_exp;
use crate::rng::SimRng;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

impl NormalPrior {
    fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sd;
        -0.5 * z * z - self.sd.ln() - LN_SQRT_2PI
    }
}

/// Analysis priors: normal on both coefficients, half-normal on `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub beta0: NormalPrior,
    pub beta1: NormalPrior,
    pub sigma_scale: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            beta0: NormalPrior { mean: 0.0, sd: 10.0 },
            beta1: NormalPrior { mean: 0.0, sd: 10.0 },
            sigma_scale: 1.0,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.beta0.sd) && ok(self.beta1.sd) && ok(self.sigma_scale))
            || !(self.beta0.mean.is_finite() && self.beta1.mean.is_finite())
        {
            return Err(Error::invalid("prior means must be finite and scales > 0"));
        }
        Ok(())
    }

    /// Half-normal log density of `sigma > 0`.
    fn ln_sigma(&self, sigma: f64) -> f64 {
        let z = sigma / self.sigma_scale;
        std::f64::consts::LN_2 - 0.5 * z * z - self.sigma_scale.ln() - LN_SQRT_2PI
    }

    /// Log prior density of `theta`; `-inf` for `sigma <= 0`.
    pub fn ln_density(&self, params: &ModelParams) -> f64 {
        if !(params.sigma > 0.0) {
            return f64::NEG_INFINITY;
        }
        self.beta0.ln_pdf(params.beta0) + self.beta1.ln_pdf(params.beta1) + self.ln_sigma(params.sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub burnin: usize,
    pub retained: usize,
    pub chains: usize,
    /// Iterations per unit of adaptation time; larger values adapt longer.
    pub adapt_window: usize,
    /// Target acceptance of the scalar blocks.
    pub target_accept: f64,
    /// Target acceptance of the coefficient pair.
    pub target_accept_pair: f64,
    /// Compute the split-chain potential scale reduction.
    pub diagnostics: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            burnin: 500,
            retained: 2000,
            chains: 1,
            adapt_window: 50,
            target_accept: 0.30,
            target_accept_pair: 0.25,
            diagnostics: false,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.retained == 0 || self.chains == 0 || self.adapt_window == 0 {
            return Err(Error::invalid("retained, chains and adapt_window must be >= 1"));
        }
        if self.retained < self.chains {
            return Err(Error::invalid("retained draws must be at least the number of chains"));
        }
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !(in_unit(self.target_accept) && in_unit(self.target_accept_pair)) {
            return Err(Error::invalid("target acceptance rates must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Post-adaptation acceptance rate of each block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptRates {
    pub pair: f64,
    pub log_sigma: f64,
    /// Averaged over clusters.
    pub effects: f64,
}

/// Retained draws of `(beta0, beta1, sigma, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Row-major `retained x c`.
    pub w: Vec<f64>,
    pub c: usize,
    pub accept: AcceptRates,
    /// Maximum split-chain R-hat over `beta0`, `beta1`, `log sigma`.
    pub rhat: Option<f64>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.beta0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta0.is_empty()
    }

    pub fn params(&self, s: usize) -> ModelParams {
        ModelParams {
            beta0: self.beta0[s],
            beta1: self.beta1[s],
            sigma: self.sigma[s],
        }
    }

    /// Cluster effects of draw `s`.
    pub fn effects(&self, s: usize) -> &[f64] {
        &self.w[s * self.c..(s + 1) * self.c]
    }

    /// Writes one whitespace-separated row per retained draw.
    pub fn write_columns(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(out, "draw\tbeta0\tbeta1\tsigma")?;
        for j in 0..self.c {
            write!(out, "\tw{}", j + 1)?;
        }
        writeln!(out)?;
        for s in 0..self.len() {
            write!(out, "{}\t{}\t{}\t{}", s, self.beta0[s], self.beta1[s], self.sigma[s])?;
            for w in self.effects(s) {
                write!(out, "\t{w}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Per-cluster sufficient statistics.
struct Clusters {
    n: Vec<f64>,
    y: Vec<f64>,
    arm: Vec<f64>,
}

impl Clusters {
    fn from_trial(data: &TrialData) -> Self {
        Self {
            n: data.cluster_sizes.iter().map(|&n| f64::from(n)).collect(),
            y: data.events().into_iter().map(f64::from).collect(),
            arm: data.arms.iter().map(|&a| f64::from(a)).collect(),
        }
    }

    #[inline]
    fn loglik(&self, j: usize, eta: f64) -> f64 {
        self.y[j] * eta - self.n[j] * log1p_exp(eta)
    }

    fn len(&self) -> usize {
        self.n.len()
    }
}

/// Log joint density of `(theta, w)` given the data.
///
/// Returns `-inf` for `sigma <= 0` or mismatched lengths.
pub fn log_joint(params: &ModelParams, w: &[f64], data: &TrialData, priors: &PriorSpec) -> f64 {
    if !(params.sigma > 0.0) || w.len() != data.c() {
        return f64::NEG_INFINITY;
    }
    let mut total = priors.ln_density(params);
    let ln_sigma = params.sigma.ln();
    for (j, ys) in data.outcomes.iter().enumerate() {
        let z = w[j] / params.sigma;
        total += -0.5 * z * z - ln_sigma - LN_SQRT_2PI;
        let eta = params.eta(data.arms[j]) + w[j];
        let events = ys.iter().filter(|&&y| y == 1).count() as f64;
        total += events * eta - ys.len() as f64 * log1p_exp(eta);
    }
    total
}

struct ChainState {
    beta0: f64,
    beta1: f64,
    log_sigma: f64,
    z: Vec<f64>,
    ll: Vec<f64>,
}

struct Scales {
    pair: f64,
    /// Relative proposal widths of the two arm intercepts, geometric mean one.
    shape: [f64; 2],
    log_sigma: f64,
    z: Vec<f64>,
}

/// Running log-scale sums over the second half of burn-in; the frozen kernel
/// uses their averages rather than the last, noisiest, iterate.
#[derive(Default)]
struct ScaleAverage {
    pair: f64,
    log_sigma: f64,
    z: Vec<f64>,
    n: f64,
}

/// Running moments of the arm intercepts, for the pair's proposal shape.
#[derive(Default)]
struct ArmMoments {
    n: f64,
    mean: [f64; 2],
    m2: [f64; 2],
}

impl ArmMoments {
    fn push(&mut self, x: [f64; 2]) {
        self.n += 1.0;
        for k in 0..2 {
            let d = x[k] - self.mean[k];
            self.mean[k] += d / self.n;
            self.m2[k] += d * (x[k] - self.mean[k]);
        }
    }

    fn shape(&self) -> Option<[f64; 2]> {
        if self.n < 50.0 {
            return None;
        }
        let sd0 = (self.m2[0] / (self.n - 1.0)).sqrt();
        let sd1 = (self.m2[1] / (self.n - 1.0)).sqrt();
        if !(sd0 > 0.0 && sd1 > 0.0) {
            return None;
        }
        let g = (sd0 * sd1).sqrt();
        Some([sd0 / g, sd1 / g])
    }
}

#[derive(Default)]
struct Tally {
    pair: f64,
    log_sigma: f64,
    effects: f64,
    iterations: f64,
}

fn initial_coefficients(cl: &Clusters) -> (f64, f64) {
    let (mut n0, mut y0, mut n1, mut y1) = (0.0, 0.0, 0.0, 0.0);
    for j in 0..cl.len() {
        if cl.arm[j] == 0.0 {
            n0 += cl.n[j];
            y0 += cl.y[j];
        } else {
            n1 += cl.n[j];
            y1 += cl.y[j];
        }
    }
    // Closed-form fit of the cluster-collapsed two-group logistic model, with
    // a half-event correction so empty cells stay finite.
    let b0 = ((y0 + 0.5) / (n0 - y0 + 0.5)).ln();
    let b1 = ((y1 + 0.5) / (n1 - y1 + 0.5)).ln() - b0;
    (b0, b1)
}

struct Chain<'a> {
    cl: &'a Clusters,
    priors: &'a PriorSpec,
    state: ChainState,
    scales: Scales,
    average: ScaleAverage,
    moments: ArmMoments,
    scratch: Vec<f64>,
}

impl<'a> Chain<'a> {
    fn new(cl: &'a Clusters, priors: &'a PriorSpec, beta0: f64, beta1: f64, sigma: f64) -> Result<Self> {
        let c = cl.len();
        let ll: Vec<f64> = (0..c).map(|j| cl.loglik(j, beta0 + beta1 * cl.arm[j])).collect();
        let state = ChainState {
            beta0,
            beta1,
            log_sigma: sigma.ln(),
            z: vec![0.0; c],
            ll,
        };
        let chain = Self {
            cl,
            priors,
            state,
            scales: Scales {
                pair: 0.5,
                shape: [1.0, 1.0],
                log_sigma: 0.5,
                z: vec![1.0; c],
            },
            average: ScaleAverage {
                z: vec![0.0; c],
                ..ScaleAverage::default()
            },
            moments: ArmMoments::default(),
            scratch: vec![0.0; c],
        };
        let lp = chain.log_target_full();
        if !lp.is_finite() {
            return Err(Error::SamplerInit(format!("initial log density is {lp}")));
        }
        Ok(chain)
    }

    fn log_target_full(&self) -> f64 {
        let s = &self.state;
        let sigma = s.log_sigma.exp();
        let params = ModelParams {
            beta0: s.beta0,
            beta1: s.beta1,
            sigma,
        };
        self.priors.ln_density(&params) + s.log_sigma - 0.5 * s.z.iter().map(|z| z * z).sum::<f64>()
            + s.ll.iter().sum::<f64>()
    }

    /// Fills `scratch` with per-cluster log-likelihoods at the given parameters.
    fn loglik_all(&mut self, beta0: f64, beta1: f64, sigma: f64) -> f64 {
        let cl = self.cl;
        let mut total = 0.0;
        for j in 0..cl.len() {
            let v = cl.loglik(j, beta0 + beta1 * cl.arm[j] + sigma * self.state.z[j]);
            self.scratch[j] = v;
            total += v;
        }
        total
    }

    /// One sweep; returns acceptance probabilities (pair, log sigma, mean over effects).
    fn sweep(&mut self, rng: &mut SimRng) -> (f64, f64, f64) {
        let c = self.cl.len();
        let sigma = self.state.log_sigma.exp();

        // Block 1: arm intercepts.
        let d0 = self.scales.pair * self.scales.shape[0] * std_normal(rng);
        let d1 = self.scales.pair * self.scales.shape[1] * std_normal(rng);
        let b0 = self.state.beta0 + d0;
        let b1 = self.state.beta1 + d1 - d0;
        let ll_new = self.loglik_all(b0, b1, sigma);
        let ll_old: f64 = self.state.ll.iter().sum();
        let log_ratio = ll_new - ll_old + self.priors.beta0.ln_pdf(b0) - self.priors.beta0.ln_pdf(self.state.beta0)
            + self.priors.beta1.ln_pdf(b1)
            - self.priors.beta1.ln_pdf(self.state.beta1);
        let a_pair = accept_prob(log_ratio);
        if rng.random::<f64>() < a_pair {
            self.state.beta0 = b0;
            self.state.beta1 = b1;
            std::mem::swap(&mut self.state.ll, &mut self.scratch);
        }

        // Block 2: log sigma, rescaling every cluster effect.
        let ls_new = self.state.log_sigma + self.scales.log_sigma * std_normal(rng);
        let sigma_new = ls_new.exp();
        let a_sigma = if sigma_new.is_finite() && sigma_new > 0.0 {
            let ll_new = self.loglik_all(self.state.beta0, self.state.beta1, sigma_new);
            let ll_old: f64 = self.state.ll.iter().sum();
            let log_ratio = ll_new - ll_old + self.priors.ln_sigma(sigma_new) - self.priors.ln_sigma(sigma)
                + (ls_new - self.state.log_sigma);
            let a = accept_prob(log_ratio);
            if rng.random::<f64>() < a {
                self.state.log_sigma = ls_new;
                std::mem::swap(&mut self.state.ll, &mut self.scratch);
            }
            a
        } else {
            0.0
        };

        // Block 3: cluster effects.
        let sigma = self.state.log_sigma.exp();
        let mut a_eff = 0.0;
        for j in 0..c {
            let z_old = self.state.z[j];
            let z_new = z_old + self.scales.z[j] * std_normal(rng);
            let eta = self.state.beta0 + self.state.beta1 * self.cl.arm[j] + sigma * z_new;
            let ll_j = self.cl.loglik(j, eta);
            let log_ratio = ll_j - self.state.ll[j] - 0.5 * (z_new * z_new - z_old * z_old);
            let a = accept_prob(log_ratio);
            if rng.random::<f64>() < a {
                self.state.z[j] = z_new;
                self.state.ll[j] = ll_j;
            }
            self.scratch[j] = a;
            a_eff += a;
        }
        let a_eff = if c > 0 { a_eff / c as f64 } else { 0.0 };
        (a_pair, a_sigma, a_eff)
    }

    fn adapt(&mut self, t: usize, cfg: &McmcConfig, rates: (f64, f64, f64)) {
        let gain = (1.0 + t as f64 / cfg.adapt_window as f64).powf(-0.8);
        self.scales.pair *= (gain * (rates.0 - cfg.target_accept_pair)).exp();
        self.scales.log_sigma *= (gain * (rates.1 - cfg.target_accept)).exp();
        // `scratch` holds the per-cluster acceptance probabilities of this sweep.
        for (s, &a) in self.scales.z.iter_mut().zip(&self.scratch) {
            *s *= (gain * (a - cfg.target_accept)).exp();
        }
        let s = &self.state;
        self.moments.push([s.beta0, s.beta0 + s.beta1]);
        if let Some(shape) = self.moments.shape() {
            self.scales.shape = shape;
        }
        if 2 * t >= cfg.burnin {
            let avg = &mut self.average;
            avg.pair += self.scales.pair.ln();
            avg.log_sigma += self.scales.log_sigma.ln();
            for (a, s) in avg.z.iter_mut().zip(&self.scales.z) {
                *a += s.ln();
            }
            avg.n += 1.0;
        }
    }

    fn freeze(&mut self) {
        let avg = &self.average;
        if avg.n == 0.0 {
            return;
        }
        self.scales.pair = (avg.pair / avg.n).exp();
        self.scales.log_sigma = (avg.log_sigma / avg.n).exp();
        for (s, a) in self.scales.z.iter_mut().zip(&avg.z) {
            *s = (a / avg.n).exp();
        }
    }
}

#[inline]
fn std_normal(rng: &mut SimRng) -> f64 {
    StandardNormal.sample(rng)
}

#[inline]
fn accept_prob(log_ratio: f64) -> f64 {
    if log_ratio >= 0.0 {
        1.0
    } else if log_ratio.is_nan() {
        0.0
    } else {
        log_ratio.exp()
    }
}

/// Draws from the joint posterior of `(beta0, beta1, sigma, w)`.
///
/// Deterministic given the data, configuration and stream.
pub fn sample_posterior(
    data: &TrialData,
    priors: &PriorSpec,
    cfg: &McmcConfig,
    rng: &mut SimRng,
) -> Result<PosteriorDraws> {
    priors.validate()?;
    cfg.validate()?;
    let cl = Clusters::from_trial(data);
    let c = cl.len();
    let (b0_init, b1_init) = initial_coefficients(&cl);

    let per_chain = cfg.retained / cfg.chains;
    let extra = cfg.retained % cfg.chains;
    let mut draws = PosteriorDraws {
        beta0: Vec::with_capacity(cfg.retained),
        beta1: Vec::with_capacity(cfg.retained),
        sigma: Vec::with_capacity(cfg.retained),
        w: Vec::with_capacity(cfg.retained * c),
        c,
        accept: AcceptRates {
            pair: 0.0,
            log_sigma: 0.0,
            effects: 0.0,
        },
        rhat: None,
    };
    let mut tally = Tally::default();
    let mut chain_bounds = Vec::with_capacity(cfg.chains);

    for k in 0..cfg.chains {
        let (b0, b1, sigma) = if k == 0 {
            (b0_init, b1_init, 0.5)
        } else {
            let jitter = |rng: &mut SimRng| -> f64 { StandardNormal.sample(rng) };
            (
                b0_init + jitter(rng),
                b1_init + jitter(rng),
                0.5 * (0.5 * jitter(rng)).exp(),
            )
        };
        let mut chain = Chain::new(&cl, priors, b0, b1, sigma)?;
        for t in 0..cfg.burnin {
            let rates = chain.sweep(rng);
            chain.adapt(t, cfg, rates);
        }
        chain.freeze();
        let keep = per_chain + usize::from(k < extra);
        let start = draws.len();
        for _ in 0..keep {
            let (ap, asig, aeff) = chain.sweep(rng);
            tally.pair += ap;
            tally.log_sigma += asig;
            tally.effects += aeff;
            tally.iterations += 1.0;
            let s = &chain.state;
            let sigma = s.log_sigma.exp();
            draws.beta0.push(s.beta0);
            draws.beta1.push(s.beta1);
            draws.sigma.push(sigma);
            draws.w.extend(s.z.iter().map(|z| sigma * z));
        }
        chain_bounds.push(start..draws.len());
    }

    draws.accept = AcceptRates {
        pair: tally.pair / tally.iterations,
        log_sigma: tally.log_sigma / tally.iterations,
        effects: tally.effects / tally.iterations,
    };
    if cfg.diagnostics {
        let log_sigma: Vec<f64> = draws.sigma.iter().map(|s| s.ln()).collect();
        let r = [&draws.beta0, &draws.beta1, &log_sigma]
            .iter()
            .map(|v| split_rhat(v, &chain_bounds))
            .fold(f64::NAN, f64::max);
        draws.rhat = Some(r);
    }
    Ok(draws)
}

/// Split-chain potential scale reduction over the given chain segments.
pub fn split_rhat(values: &[f64], chains: &[std::ops::Range<usize>]) -> f64 {
    let mut halves: Vec<&[f64]> = Vec::new();
    for r in chains {
        let seg = &values[r.clone()];
        let h = seg.len() / 2;
        if h >= 2 {
            halves.push(&seg[..h]);
            halves.push(&seg[seg.len() - h..]);
        }
    }
    if halves.len() < 2 {
        return f64::NAN;
    }
    let n = halves.iter().map(|h| h.len()).min().unwrap_or(0) as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / h.len() as f64).collect();
    let vars: Vec<f64> = halves
        .iter()
        .zip(&means)
        .map(|(h, m)| h.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (h.len() as f64 - 1.0))
        .collect();
    let k = halves.len() as f64;
    let grand = means.iter().sum::<f64>() / k;
    let b = n / (k - 1.0) * means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let w = vars.iter().sum::<f64>() / k;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}
