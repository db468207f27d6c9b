//! Trial simulation: cluster sizes, cluster-level randomization and binary
//! outcomes from the logistic random-intercept model, plus the models that
//! draw the true parameters for each repetition.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimand::{sigma_from_icc, solve_intercept, solve_slope, ModelParams};
use crate::numeric::{expit, QuadratureRule};

/// Law of the number of subjects in a cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum ClusterSizeLaw {
    Fixed { size: u32 },
    /// `1 + Poisson(lambda)`.
    ShiftedPoisson { lambda: f64 },
    /// Uniform on `lo..=hi`.
    DiscreteUniform { lo: u32, hi: u32 },
}

impl ClusterSizeLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ClusterSizeLaw::Fixed { size: 0 } => {
                Err(Error::invalid("fixed cluster size must be >= 1"))
            }
            ClusterSizeLaw::ShiftedPoisson { lambda } if !(lambda > 0.0 && lambda.is_finite()) => {
                Err(Error::invalid(format!("poisson lambda must be > 0, got {lambda}")))
            }
            ClusterSizeLaw::DiscreteUniform { lo, hi } if lo == 0 || lo > hi => {
                Err(Error::invalid(format!("uniform cluster sizes need 1 <= lo <= hi, got {lo}..={hi}")))
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ClusterSizeLaw::Fixed { size } => f64::from(size),
            ClusterSizeLaw::ShiftedPoisson { lambda } => 1.0 + lambda,
            ClusterSizeLaw::DiscreteUniform { lo, hi } => 0.5 * f64::from(lo + hi),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match *self {
            ClusterSizeLaw::Fixed { size } => size,
            ClusterSizeLaw::ShiftedPoisson { lambda } => {
                let k: f64 = Poisson::new(lambda).expect("validated lambda").sample(rng);
                1 + k as u32
            }
            ClusterSizeLaw::DiscreteUniform { lo, hi } => rng.random_range(lo..=hi),
        }
    }
}

/// Auxiliary data-generation process. Allocation is always 1:1 at the cluster level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZetaProcess {
    pub cluster_size: ClusterSizeLaw,
}

impl Default for ZetaProcess {
    fn default() -> Self {
        Self {
            cluster_size: ClusterSizeLaw::ShiftedPoisson { lambda: 2.0 },
        }
    }
}

impl ZetaProcess {
    pub fn fixed(size: u32) -> Self {
        Self {
            cluster_size: ClusterSizeLaw::Fixed { size },
        }
    }
}

/// Distribution of one component of `theta` under a sampling design prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum ParamLaw {
    Fixed { value: f64 },
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl ParamLaw {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ParamLaw::Fixed { value } => value,
            ParamLaw::Normal { mean, sd } => Normal::new(mean, sd).expect("validated sd").sample(rng),
            ParamLaw::Uniform { lo, hi } => rng.random_range(lo..hi),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ParamLaw::Fixed { value } if !value.is_finite() => Err(Error::invalid("fixed value must be finite")),
            ParamLaw::Normal { mean, sd } if !(mean.is_finite() && sd > 0.0 && sd.is_finite()) => {
                Err(Error::invalid("normal law needs finite mean and sd > 0"))
            }
            ParamLaw::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo < hi) => {
                Err(Error::invalid("uniform law needs finite lo < hi"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PsiKind {
    /// Every repetition uses the same parameters.
    Degenerate(ModelParams),
    /// Independent draws per component; negative `sigma` draws are reflected.
    Sampler {
        beta0: ParamLaw,
        beta1: ParamLaw,
        sigma: ParamLaw,
    },
}

/// Model generating the true parameters of each simulation repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiModel {
    pub label: String,
    pub kind: PsiKind,
}

impl PsiModel {
    pub fn degenerate(label: impl Into<String>, params: ModelParams) -> Self {
        Self {
            label: label.into(),
            kind: PsiKind::Degenerate(params),
        }
    }

    pub fn sampler(label: impl Into<String>, beta0: ParamLaw, beta1: ParamLaw, sigma: ParamLaw) -> Result<Self> {
        for law in [&beta0, &beta1, &sigma] {
            law.validate()?;
        }
        Ok(Self {
            label: label.into(),
            kind: PsiKind::Sampler { beta0, beta1, sigma },
        })
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self.kind, PsiKind::Degenerate(_))
    }
}

/// Draws `theta_r ~ Psi`.
pub fn draw_theta<R: Rng + ?Sized>(psi: &PsiModel, rng: &mut R) -> ModelParams {
    match &psi.kind {
        PsiKind::Degenerate(p) => *p,
        PsiKind::Sampler { beta0, beta1, sigma } => ModelParams {
            beta0: beta0.sample(rng),
            beta1: beta1.sample(rng),
            sigma: sigma.sample(rng).abs(),
        },
    }
}

/// One simulated trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialData {
    pub cluster_sizes: Vec<u32>,
    pub arms: Vec<u8>,
    pub outcomes: Vec<Vec<u8>>,
}

impl TrialData {
    pub fn new(cluster_sizes: Vec<u32>, arms: Vec<u8>, outcomes: Vec<Vec<u8>>) -> Result<Self> {
        if cluster_sizes.len() != arms.len() || arms.len() != outcomes.len() {
            return Err(Error::invalid("cluster sizes, arms and outcomes must have equal length"));
        }
        for (j, ((&n, &a), ys)) in cluster_sizes.iter().zip(&arms).zip(&outcomes).enumerate() {
            if n == 0 || ys.len() != n as usize {
                return Err(Error::invalid(format!("cluster {j}: size {n} with {} outcomes", ys.len())));
            }
            if a > 1 || ys.iter().any(|&y| y > 1) {
                return Err(Error::invalid(format!("cluster {j}: arms and outcomes must be 0/1")));
            }
        }
        Ok(Self {
            cluster_sizes,
            arms,
            outcomes,
        })
    }

    pub fn empty() -> Self {
        Self {
            cluster_sizes: Vec::new(),
            arms: Vec::new(),
            outcomes: Vec::new(),
        }
    }

    /// Number of clusters.
    pub fn c(&self) -> usize {
        self.cluster_sizes.len()
    }

    /// Total number of subjects.
    pub fn n_total(&self) -> u64 {
        self.cluster_sizes.iter().map(|&n| u64::from(n)).sum()
    }

    /// Events per cluster.
    pub fn events(&self) -> Vec<u32> {
        self.outcomes
            .iter()
            .map(|ys| ys.iter().map(|&y| u32::from(y)).sum())
            .collect()
    }

    /// A trial made of a subset of clusters.
    pub fn select(&self, clusters: &[usize]) -> Self {
        Self {
            cluster_sizes: clusters.iter().map(|&j| self.cluster_sizes[j]).collect(),
            arms: clusters.iter().map(|&j| self.arms[j]).collect(),
            outcomes: clusters.iter().map(|&j| self.outcomes[j].clone()).collect(),
        }
    }
}

/// Balanced cluster-level arm assignment; with odd `c` the extra cluster's arm is random.
pub fn balanced_arms<R: Rng + ?Sized>(c: usize, rng: &mut R) -> Vec<u8> {
    let mut arms = Vec::with_capacity(c);
    arms.extend(std::iter::repeat_n(0u8, c / 2));
    arms.extend(std::iter::repeat_n(1u8, c / 2));
    if c % 2 == 1 {
        arms.push(u8::from(rng.random_bool(0.5)));
    }
    arms.shuffle(rng);
    arms
}

/// Simulates one trial with `c` clusters.
///
/// Draw order is fixed (sizes, arms, cluster effects, outcomes) and the
/// standardized cluster effects are drawn even when `sigma = 0`, so trials
/// simulated from one stream under different `sigma` share their randomness.
pub fn simulate_trial<R: Rng + ?Sized>(
    params: &ModelParams,
    zeta: &ZetaProcess,
    c: usize,
    rng: &mut R,
) -> Result<TrialData> {
    if c < 2 {
        return Err(Error::invalid(format!("a trial needs at least 2 clusters, got {c}")));
    }
    params.validate()?;
    zeta.cluster_size.validate()?;

    let cluster_sizes: Vec<u32> = (0..c).map(|_| zeta.cluster_size.sample(rng)).collect();
    let arms = balanced_arms(c, rng);
    let outcomes = cluster_sizes
        .iter()
        .zip(&arms)
        .map(|(&n, &a)| {
            let z: f64 = StandardNormal.sample(rng);
            let p = expit(params.eta(a) + params.sigma * z);
            (0..n).map(|_| u8::from(rng.random::<f64>() < p)).collect()
        })
        .collect();
    Ok(TrialData {
        cluster_sizes,
        arms,
        outcomes,
    })
}

/// Marginal event rates of the reference arm and each experimental treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioTable {
    pub reference_rate: f64,
    pub treatments: Vec<TreatmentScenario>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreatmentScenario {
    pub label: String,
    pub rate: f64,
}

impl Default for ScenarioTable {
    fn default() -> Self {
        let t = |label: &str, rate| TreatmentScenario {
            label: label.to_string(),
            rate,
        };
        Self {
            reference_rate: 0.02,
            treatments: vec![
                t("clearly-acceptable", 0.02),
                t("acceptable", 0.03),
                t("barely-acceptable", 0.05),
                t("unacceptable", 0.06),
            ],
        }
    }
}

impl ScenarioTable {
    pub fn validate(&self) -> Result<()> {
        let ok = |r: f64| r > 0.0 && r < 1.0;
        if !ok(self.reference_rate) {
            return Err(Error::invalid("reference rate must lie in (0, 1)"));
        }
        if self.treatments.is_empty() {
            return Err(Error::invalid("at least one treatment scenario is required"));
        }
        for t in &self.treatments {
            if !ok(t.rate) {
                return Err(Error::invalid(format!("scenario {} rate must lie in (0, 1)", t.label)));
            }
        }
        Ok(())
    }

    pub fn get(&self, label: &str) -> Option<&TreatmentScenario> {
        self.treatments.iter().find(|t| t.label == label)
    }
}

/// Parameters whose marginal rates hit `control_rate` and `treated_rate` at the given latent ICC.
pub fn build_theta_for_scenario(
    control_rate: f64,
    treated_rate: f64,
    icc: f64,
    rule: &QuadratureRule,
) -> Result<ModelParams> {
    let sigma = sigma_from_icc(icc)?;
    let beta0 = solve_intercept(control_rate, sigma, rule)?;
    let beta1 = if treated_rate == control_rate {
        0.0
    } else {
        solve_slope(beta0, treated_rate, sigma, rule)?
    };
    ModelParams::new(beta0, beta1, sigma)
}
