//! Two-point sample size determination.
//!
//! Posterior probabilities are simulated at two cluster counts `c0` and `c1`.
//! Their logits, paired by rank, define one straight line per repetition in
//! `c`; inverse logits of those lines estimate the sampling distribution of
//! the posterior probability, and hence the operating characteristics, at any
//! other `c`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{draw_theta, simulate_trial, PsiModel, ZetaProcess};
use crate::error::{Error, Result};
use crate::estimand::{delta_unchecked, Hypothesis};
use crate::gcomp::{
    marginalize_dirichlet, marginalize_parametric, tau_from_delta, GcompConfig, MarginalizationMethod, TauValue,
};
use crate::glmm::{sample_posterior, McmcConfig, PriorSpec};
use crate::numeric::{expit, QuadratureRule};
use crate::proxy::{theorem1_slope, LambdaEstimate};
use crate::rng::{substream, SimRng};

/// Everything needed to turn one simulated trial into a posterior probability.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSettings {
    pub priors: PriorSpec,
    pub mcmc: McmcConfig,
    pub hypothesis: Hypothesis,
    pub gcomp: GcompConfig,
}

impl AnalysisSettings {
    pub fn new(hypothesis: Hypothesis) -> Self {
        Self {
            priors: PriorSpec::default(),
            mcmc: McmcConfig::default(),
            hypothesis,
            gcomp: GcompConfig::default(),
        }
    }
}

/// Posterior probabilities from `m` repetitions under one model at one `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSample {
    pub c: u32,
    pub psi_label: String,
    pub taus: Vec<TauValue>,
    /// `delta(theta_r)` of each repetition.
    pub deltas: Vec<f64>,
    pub master_seed: u64,
}

impl TauSample {
    pub fn m(&self) -> usize {
        self.taus.len()
    }

    pub fn logits(&self) -> Vec<f64> {
        self.taus.iter().map(|t| t.logit_tau).collect()
    }

    fn check(&self) -> Result<()> {
        if self.taus.len() != self.deltas.len() || self.taus.is_empty() {
            return Err(Error::invalid(format!(
                "tau sample for {} at c = {} has {} taus and {} deltas",
                self.psi_label,
                self.c,
                self.taus.len(),
                self.deltas.len()
            )));
        }
        Ok(())
    }
}

/// Posterior probability for one repetition.
///
/// The trial, the sampler and the Dirichlet weights all draw from `rng`.
pub fn analyze_repetition(
    psi: &PsiModel,
    zeta: &ZetaProcess,
    c: u32,
    settings: &AnalysisSettings,
    rule: &QuadratureRule,
    rng: &mut SimRng,
) -> Result<(TauValue, f64)> {
    let theta = draw_theta(psi, rng);
    let delta_r = delta_unchecked(&theta, rule);
    let trial = simulate_trial(&theta, zeta, c as usize, rng)?;
    let draws = sample_posterior(&trial, &settings.priors, &settings.mcmc, rng)?;
    let dp = match settings.gcomp.method {
        MarginalizationMethod::ParametricQuadrature => marginalize_parametric(&draws, rule),
        MarginalizationMethod::DirichletReweight => {
            marginalize_dirichlet(&draws, settings.gcomp.dirichlet_reweights, rng)?
        }
    };
    let tau = tau_from_delta(&dp, &settings.hypothesis, settings.gcomp.bandwidth)?;
    Ok((tau, delta_r))
}

/// Stream of attempt `attempt` of repetition `r`.
///
/// Keyed by model label, `c` and repetition only, so models that share a
/// label (the same scenario under different ICC settings) see common random
/// numbers.
pub fn repetition_stream(master_seed: u64, psi_label: &str, c: u32, r: usize, attempt: u64) -> SimRng {
    substream(master_seed, &format!("tau/{psi_label}"), &[u64::from(c), r as u64, attempt])
}

/// Simulates `m` posterior probabilities under `psi` at `c` clusters.
///
/// Repetitions run on the current rayon pool. A failed repetition is retried
/// once on a fresh stream; a second failure aborts with its index.
pub fn simulate_tau_sample(
    psi: &PsiModel,
    zeta: &ZetaProcess,
    c: u32,
    m: usize,
    settings: &AnalysisSettings,
    master_seed: u64,
) -> Result<TauSample> {
    if m == 0 {
        return Err(Error::invalid("m must be >= 1"));
    }
    if m < 100 {
        log::warn!("m = {m} repetitions: operating characteristic estimates are unreliable below 100");
    }
    settings.gcomp.validate()?;
    let rule = QuadratureRule::gauss_hermite(settings.gcomp.quadrature_order)?;
    let results: Vec<Result<(TauValue, f64)>> = (0..m)
        .into_par_iter()
        .map(|r| {
            let first = analyze_repetition(psi, zeta, c, settings, &rule, &mut repetition_stream(master_seed, &psi.label, c, r, 0));
            match first {
                Ok(v) => Ok(v),
                Err(e) => {
                    log::warn!("repetition {r} of {} at c = {c} failed ({e}); retrying", psi.label);
                    analyze_repetition(psi, zeta, c, settings, &rule, &mut repetition_stream(master_seed, &psi.label, c, r, 1))
                        .map_err(|e| Error::Repetition { repetition: r, reason: e.to_string() })
                }
            }
        })
        .collect();
    let mut taus = Vec::with_capacity(m);
    let mut deltas = Vec::with_capacity(m);
    for res in results {
        let (t, d) = res?;
        taus.push(t);
        deltas.push(d);
    }
    Ok(TauSample {
        c,
        psi_label: psi.label.clone(),
        taus,
        deltas,
        master_seed,
    })
}

/// Empirical fraction of posterior probabilities at or above `gamma`.
pub fn estimate_oc(sample: &TauSample, gamma: f64) -> f64 {
    fraction(sample.taus.iter().filter(|t| t.tau >= gamma).count(), sample.m())
}

fn fraction(count: usize, m: usize) -> f64 {
    count as f64 / m as f64
}

/// Grid value `k * step`, computed as a quotient when `1 / step` is an
/// integer so that values such as 0.97 come out exactly.
fn grid_value(k: u64, step: f64) -> f64 {
    let inv = (1.0 / step).round();
    if ((1.0 / step) - inv).abs() < 1e-9 {
        k as f64 / inv
    } else {
        k as f64 * step
    }
}

/// Smallest grid threshold whose rejection rate over `taus` is at most `alpha`.
fn smallest_grid_gamma(taus: &[f64], alpha: f64, grid_step: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::invalid(format!("grid step must lie in (0, 1], got {grid_step}")));
    }
    let rate = |g: f64| fraction(taus.iter().filter(|&&t| t >= g).count(), taus.len());
    let n = (1.0 / grid_step).floor() as u64;
    for k in 1..=n {
        let gamma = grid_value(k, grid_step);
        if rate(gamma) <= alpha {
            return Ok(gamma);
        }
    }
    if rate(1.0) <= alpha {
        return Ok(1.0);
    }
    Err(Error::Calibration { alpha, rate_at_one: rate(1.0) })
}

/// Smallest threshold on the grid `{step, 2 step, ..., 1}` whose null
/// operating characteristic is at most `alpha`.
pub fn calibrate_gamma(null_sample: &TauSample, alpha: f64, grid_step: f64) -> Result<f64> {
    null_sample.check()?;
    let taus: Vec<f64> = null_sample.taus.iter().map(|t| t.tau).collect();
    smallest_grid_gamma(&taus, alpha, grid_step)
}

/// As [`calibrate_gamma`], against the posterior probabilities predicted at
/// `c` by a null-model line family.
pub fn calibrate_gamma_at(null_lines: &LogitLineFamily, c: u32, alpha: f64, grid_step: f64) -> Result<f64> {
    let taus: Vec<f64> = (0..null_lines.len()).map(|r| expit(null_lines.eval(r, c))).collect();
    smallest_grid_gamma(&taus, alpha, grid_step)
}

/// Outcome of the second-cluster-count heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C1Choice {
    pub c1: u32,
    /// Projected power at `c1`.
    pub projected_power: f64,
    /// The target was not reached below the cap.
    pub capped: bool,
}

/// Minimum distance between the two simulated cluster counts.
pub fn min_separation(c0: u32) -> u32 {
    ((0.1 * f64::from(c0)).round() as u32).max(1)
}

/// Chooses `c1` by projecting each logit at `c0` along the limiting slope of
/// its repetition.
///
/// Returns the smallest `c` whose projected power reaches `1 - beta`, moved
/// at least [`min_separation`] away from `c0` on the side given by the power
/// at `c0`: below when it already reaches the target, above otherwise.
pub fn choose_c1(
    sample_c0: &TauSample,
    gamma: f64,
    beta: f64,
    lambda: &LambdaEstimate,
    hyp: &Hypothesis,
    cap: u32,
) -> Result<C1Choice> {
    sample_c0.check()?;
    let c0 = sample_c0.c;
    let target = 1.0 - beta;
    let slopes: Vec<f64> = sample_c0
        .deltas
        .iter()
        .map(|&d| theorem1_slope(d, lambda.lambda, hyp))
        .collect();
    let projected = |c: u32| -> f64 {
        let dc = f64::from(c) - f64::from(c0);
        let hits = sample_c0
            .taus
            .iter()
            .zip(&slopes)
            .filter(|(t, s)| expit(t.logit_tau + *s * dc) >= gamma)
            .count();
        fraction(hits, sample_c0.m())
    };
    let sep = min_separation(c0);
    let cap = cap.max(c0 + sep);
    if estimate_oc(sample_c0, gamma) >= target {
        let smallest = (2..c0).find(|&c| projected(c) >= target).unwrap_or(c0);
        let c1 = smallest.min(c0.saturating_sub(sep)).max(2);
        if c1 == c0 {
            return Err(Error::invalid(format!("no room below c0 = {c0} for a second cluster count")));
        }
        return Ok(C1Choice { c1, projected_power: projected(c1), capped: false });
    }
    match (c0 + 1..=cap).find(|&c| projected(c) >= target) {
        Some(c) => {
            let c1 = c.max(c0 + sep);
            Ok(C1Choice { c1, projected_power: projected(c1), capped: false })
        }
        None => {
            log::warn!("projected power stays below {target} up to c = {cap}; using the cap as c1");
            Ok(C1Choice { c1: cap, projected_power: projected(cap), capped: true })
        }
    }
}

/// One line per repetition through paired logits at `c0` and `c1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitLineFamily {
    pub c0: u32,
    pub c1: u32,
    /// Logit at `c0` of each line.
    pub at_c0: Vec<f64>,
    /// Logit at `c1` of each line.
    pub at_c1: Vec<f64>,
    pub subgroup_count: usize,
}

impl LogitLineFamily {
    pub fn len(&self) -> usize {
        self.at_c0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.at_c0.is_empty()
    }

    pub fn slope(&self, r: usize) -> f64 {
        (self.at_c1[r] - self.at_c0[r]) / (f64::from(self.c1) - f64::from(self.c0))
    }

    pub fn intercept(&self, r: usize) -> f64 {
        self.at_c0[r] - self.slope(r) * f64::from(self.c0)
    }

    /// Logit of line `r` at `c`. Returns the stored endpoints exactly at `c0` and `c1`.
    pub fn eval(&self, r: usize, c: u32) -> f64 {
        if c == self.c1 {
            self.at_c1[r]
        } else {
            self.at_c0[r] + self.slope(r) * (f64::from(c) - f64::from(self.c0))
        }
    }
}

/// Orders repetitions by `(key, logit, index)`.
fn ordered(keys: &[f64], logits: &[f64], idx: &mut [usize]) {
    idx.sort_by(|&a, &b| {
        keys[a]
            .total_cmp(&keys[b])
            .then(logits[a].total_cmp(&logits[b]))
            .then(a.cmp(&b))
    });
}

/// Boundaries of `g` blocks of near-equal size over `m` items.
fn block_bounds(m: usize, g: usize) -> Vec<(usize, usize)> {
    (0..g).map(|k| (k * m / g, (k + 1) * m / g)).collect()
}

/// Logits of one sample in line order: blocks by `delta`, sorted logits within.
fn line_order(deltas: &[f64], logits: &[f64], g: usize) -> Vec<f64> {
    let m = logits.len();
    let mut idx: Vec<usize> = (0..m).collect();
    if g > 1 {
        ordered(deltas, logits, &mut idx);
    }
    let zeros = vec![0.0; m];
    let mut out = Vec::with_capacity(m);
    for (lo, hi) in block_bounds(m, g) {
        let block = &mut idx[lo..hi];
        ordered(&zeros, logits, block);
        out.extend(block.iter().map(|&i| logits[i]));
    }
    out
}

fn fit_from_parts(
    c0: u32,
    c1: u32,
    d0: &[f64],
    l0: &[f64],
    d1: &[f64],
    l1: &[f64],
    subgroups: usize,
) -> Result<LogitLineFamily> {
    if c0 == c1 {
        return Err(Error::invalid(format!("both samples are at c = {c0}")));
    }
    if l0.len() != l1.len() || l0.is_empty() {
        return Err(Error::invalid(format!("samples have m = {} and {}", l0.len(), l1.len())));
    }
    if subgroups == 0 || subgroups > l0.len() {
        return Err(Error::invalid(format!("subgroup count {subgroups} outside 1..={}", l0.len())));
    }
    Ok(LogitLineFamily {
        c0,
        c1,
        at_c0: line_order(d0, l0, subgroups),
        at_c1: line_order(d1, l1, subgroups),
        subgroup_count: subgroups,
    })
}

/// Pairs the `r`-th order statistics of the two samples' logits.
///
/// With `subgroups > 1`, each sample is first split into that many equal
/// blocks by the order statistics of `delta(theta_r)`, and pairing happens
/// within blocks. Ties are broken by repetition index.
pub fn fit_logit_lines(sample0: &TauSample, sample1: &TauSample, subgroups: usize) -> Result<LogitLineFamily> {
    sample0.check()?;
    sample1.check()?;
    if sample0.psi_label != sample1.psi_label {
        return Err(Error::invalid(format!(
            "samples come from different models: {} and {}",
            sample0.psi_label, sample1.psi_label
        )));
    }
    fit_from_parts(
        sample0.c,
        sample1.c,
        &sample0.deltas,
        &sample0.logits(),
        &sample1.deltas,
        &sample1.logits(),
        subgroups,
    )
}

/// Default subgroup count: one for a degenerate model, otherwise one per 500
/// repetitions, at most 20.
pub fn default_subgroups(psi: &PsiModel, m: usize) -> usize {
    if psi.is_degenerate() {
        1
    } else {
        m.div_ceil(500).clamp(1, 20)
    }
}

/// Fraction of lines whose inverse logit at `c` reaches `gamma`.
pub fn predict_power(lines: &LogitLineFamily, c: u32, gamma: f64) -> f64 {
    let hits = (0..lines.len()).filter(|&r| expit(lines.eval(r, c)) >= gamma).count();
    fraction(hits, lines.len())
}

/// Number of lines at or above `gamma` for every `c` in `c_min..=c_max`.
///
/// Each line's predicate is monotone in `c`, so its qualifying set is an
/// interval found from the crossing point and then adjusted against the exact
/// predicate. `c1` is recounted directly because lines return their stored
/// endpoint there.
fn hit_counts(lines: &LogitLineFamily, gamma: f64, c_min: u32, c_max: u32) -> Vec<usize> {
    let len = (c_max - c_min + 1) as usize;
    let mut diff = vec![0i64; len + 1];
    let eval = |r: usize, c: u32| -> f64 {
        lines.at_c0[r] + lines.slope(r) * (f64::from(c) - f64::from(lines.c0))
    };
    let threshold = crate::numeric::logit(gamma);
    for r in 0..lines.len() {
        let slope = lines.slope(r);
        let pred = |c: u32| expit(eval(r, c)) >= gamma;
        let (lo, hi) = if slope > 0.0 {
            // qualifying set is [start, c_max]
            let guess = f64::from(lines.c0) + (threshold - lines.at_c0[r]) / slope;
            let mut start = guess.ceil().clamp(f64::from(c_min), f64::from(c_max)) as u32;
            while start > c_min && pred(start - 1) {
                start -= 1;
            }
            while start <= c_max && !pred(start) {
                start += 1;
            }
            (start, c_max)
        } else if slope < 0.0 {
            // qualifying set is [c_min, end]
            let guess = f64::from(lines.c0) + (threshold - lines.at_c0[r]) / slope;
            let mut end = guess.floor().clamp(f64::from(c_min), f64::from(c_max)) as u32;
            while end < c_max && pred(end + 1) {
                end += 1;
            }
            while end >= c_min && !pred(end) {
                if end == 0 {
                    break;
                }
                end -= 1;
            }
            if end < c_min || !pred(end) {
                (1, 0)
            } else {
                (c_min, end)
            }
        } else if pred(c_min) {
            (c_min, c_max)
        } else {
            (1, 0)
        };
        if lo <= hi && lo <= c_max {
            diff[(lo - c_min) as usize] += 1;
            diff[(hi - c_min) as usize + 1] -= 1;
        }
    }
    let mut counts = Vec::with_capacity(len);
    let mut acc = 0i64;
    for d in &diff[..len] {
        acc += d;
        counts.push(acc as usize);
    }
    if (c_min..=c_max).contains(&lines.c1) {
        counts[(lines.c1 - c_min) as usize] =
            (0..lines.len()).filter(|&r| expit(lines.at_c1[r]) >= gamma).count();
    }
    counts
}

fn check_range(c_min: u32, c_max: u32) -> Result<()> {
    if c_min < 2 || c_min > c_max {
        return Err(Error::invalid(format!("search range {c_min}..={c_max} needs 2 <= c_min <= c_max")));
    }
    Ok(())
}

/// Smallest `c` in `c_min..=c_max` whose predicted power reaches `1 - beta`.
///
/// Power from crossing lines need not be monotone in `c`, so every value is
/// checked in order.
pub fn find_min_clusters(lines: &LogitLineFamily, gamma: f64, beta: f64, c_min: u32, c_max: u32) -> Result<u32> {
    check_range(c_min, c_max)?;
    let counts = hit_counts(lines, gamma, c_min, c_max);
    let m = lines.len();
    let target = 1.0 - beta;
    if let Some(k) = counts.iter().position(|&n| fraction(n, m) >= target) {
        return Ok(c_min + k as u32);
    }
    let (k, &best) = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("non-empty range");
    Err(Error::TargetUnreachable {
        c_min,
        c_max,
        max_power: fraction(best, m),
        argmax: c_min + k as u32,
    })
}

/// Percentile interval with the nearest-rank rule.
fn nearest_rank<T: Copy + Ord>(sorted: &[T], q: f64) -> T {
    let n = sorted.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

fn nearest_rank_f64(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Bootstrap settings shared by the recommendation interval and the curve bands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapSpec {
    pub resamples: usize,
    pub level: f64,
    pub subgroups: usize,
    pub c_min: u32,
    pub c_max: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub ci_lower: u32,
    pub ci_upper: u32,
    /// Recommendation of every resample, in resample order.
    pub recommendations: Vec<u32>,
    /// Resamples whose target was unreachable, recorded as `c_max`.
    pub censored: usize,
}

fn resample(sample: &TauSample, rng: &mut SimRng) -> (Vec<f64>, Vec<f64>) {
    let m = sample.m();
    let mut d = Vec::with_capacity(m);
    let mut l = Vec::with_capacity(m);
    for _ in 0..m {
        let i = rng.random_range(0..m);
        d.push(sample.deltas[i]);
        l.push(sample.taus[i].logit_tau);
    }
    (d, l)
}

/// Runs `f` on the line family of every bootstrap resample, in parallel,
/// returning results in resample order.
fn over_resamples<T, F>(sample0: &TauSample, sample1: &TauSample, spec: &BootstrapSpec, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&LogitLineFamily) -> T + Sync,
{
    sample0.check()?;
    sample1.check()?;
    if spec.resamples == 0 {
        return Err(Error::invalid("bootstrap needs at least one resample"));
    }
    (0..spec.resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(spec.seed, "bootstrap", &[b as u64]);
            let (d0, l0) = resample(sample0, &mut rng);
            let (d1, l1) = resample(sample1, &mut rng);
            let lines = fit_from_parts(sample0.c, sample1.c, &d0, &l0, &d1, &l1, spec.subgroups)?;
            Ok(f(&lines))
        })
        .collect()
}

fn recommendation_or_cap(lines: &LogitLineFamily, gamma: f64, beta: f64, spec: &BootstrapSpec) -> (u32, bool) {
    match find_min_clusters(lines, gamma, beta, spec.c_min, spec.c_max) {
        Ok(c) => (c, false),
        Err(_) => (spec.c_max, true),
    }
}

/// Percentile interval of the resampled recommendations, widened to contain `point`.
fn summarize(recs: Vec<(u32, bool)>, level: f64, point: u32) -> BootstrapSummary {
    let censored = recs.iter().filter(|r| r.1).count();
    let recommendations: Vec<u32> = recs.into_iter().map(|r| r.0).collect();
    let mut sorted = recommendations.clone();
    sorted.sort_unstable();
    let tail = 0.5 * (1.0 - level);
    BootstrapSummary {
        ci_lower: nearest_rank(&sorted, tail).min(point),
        ci_upper: nearest_rank(&sorted, 1.0 - tail).max(point),
        recommendations,
        censored,
    }
}

/// Percentile interval for the recommended cluster count.
///
/// Both samples are resampled with replacement, `(tau, delta)` pairs kept
/// together, lines are refit and a new recommendation found. Resamples whose
/// target is unreachable count as `c_max`. The interval is widened to
/// contain the recommendation from the original samples.
pub fn bootstrap_recommendation(
    sample0: &TauSample,
    sample1: &TauSample,
    gamma: f64,
    beta: f64,
    spec: &BootstrapSpec,
) -> Result<BootstrapSummary> {
    check_range(spec.c_min, spec.c_max)?;
    if !(spec.level > 0.0 && spec.level < 1.0) {
        return Err(Error::invalid(format!("level must lie in (0, 1), got {}", spec.level)));
    }
    let point = recommendation_or_cap(&fit_logit_lines(sample0, sample1, spec.subgroups)?, gamma, beta, spec).0;
    let recs = over_resamples(sample0, sample1, spec, |lines| recommendation_or_cap(lines, gamma, beta, spec))?;
    Ok(summarize(recs, spec.level, point))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcPoint {
    pub c: u32,
    pub estimate: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

fn bands(point: &[f64], per_resample: &[Vec<f64>], grid_len: usize, level: f64) -> Vec<(f64, f64)> {
    let tail = 0.5 * (1.0 - level);
    (0..grid_len)
        .map(|k| {
            let mut v: Vec<f64> = per_resample.iter().map(|p| p[k]).collect();
            v.sort_by(f64::total_cmp);
            let lo = nearest_rank_f64(&v, tail).min(point[k]);
            let hi = nearest_rank_f64(&v, 1.0 - tail).max(point[k]);
            (lo, hi)
        })
        .collect()
}

fn powers_on_grid(lines: &LogitLineFamily, gammas: &[f64], grid: &[u32]) -> Vec<f64> {
    grid.iter().zip(gammas).map(|(&c, &g)| predict_power(lines, c, g)).collect()
}

/// Operating characteristic over `grid` from the point lines, with pointwise
/// percentile bands from bootstrap line families.
///
/// Bands are widened to contain the point estimate where the percentile
/// interval misses it.
pub fn oc_curve(
    lines: &LogitLineFamily,
    gamma: f64,
    grid: &[u32],
    sample0: &TauSample,
    sample1: &TauSample,
    spec: &BootstrapSpec,
) -> Result<Vec<OcPoint>> {
    if grid.is_empty() {
        return Err(Error::invalid("curve grid is empty"));
    }
    let gammas = vec![gamma; grid.len()];
    let point = powers_on_grid(lines, &gammas, grid);
    let per = over_resamples(sample0, sample1, spec, |l| powers_on_grid(l, &gammas, grid))?;
    Ok(grid
        .iter()
        .zip(&point)
        .zip(bands(&point, &per, grid.len(), spec.level))
        .map(|((&c, &estimate), (band_lo, band_hi))| OcPoint { c, estimate, band_lo, band_hi })
        .collect())
}

/// Recommendation interval and curve bands from a single set of resamples.
///
/// The recommendation uses `gamma`; curve point `k` uses `grid_gammas[k]`.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_study(
    lines: &LogitLineFamily,
    sample0: &TauSample,
    sample1: &TauSample,
    gamma: f64,
    beta: Option<f64>,
    grid: &[u32],
    grid_gammas: &[f64],
    spec: &BootstrapSpec,
) -> Result<(Option<BootstrapSummary>, Vec<OcPoint>)> {
    check_range(spec.c_min, spec.c_max)?;
    if grid.len() != grid_gammas.len() {
        return Err(Error::invalid("one threshold per curve point is required"));
    }
    let point = powers_on_grid(lines, grid_gammas, grid);
    let per = over_resamples(sample0, sample1, spec, |l| {
        let rec = beta.map(|b| recommendation_or_cap(l, gamma, b, spec));
        (rec, powers_on_grid(l, grid_gammas, grid))
    })?;
    let summary = beta.map(|b| {
        let point = recommendation_or_cap(lines, gamma, b, spec).0;
        summarize(per.iter().map(|p| p.0.expect("recommendation requested")).collect(), spec.level, point)
    });
    let curves: Vec<Vec<f64>> = per.into_iter().map(|p| p.1).collect();
    let curve = grid
        .iter()
        .zip(&point)
        .zip(bands(&point, &curves, grid.len(), spec.level))
        .map(|((&c, &estimate), (band_lo, band_hi))| OcPoint { c, estimate, band_lo, band_hi })
        .collect();
    Ok((summary, curve))
}

/// Outcome of the two-point procedure for one design setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsdResult {
    pub gamma: f64,
    pub c0: u32,
    pub c1: u32,
    pub c2: u32,
    pub power_at_c2: f64,
    pub ci_lower: u32,
    pub ci_upper: u32,
    pub bootstrap_censored: usize,
    pub subgroups: usize,
    pub oc_curve: Vec<OcPoint>,
}
