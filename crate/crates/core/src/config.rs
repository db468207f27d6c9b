//! Design-study configuration.
//!
//! TOML by default; files ending in `.json` are read as JSON. Every section
//! has defaults mirroring the reference study, so a config only needs the
//! keys it changes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{build_theta_for_scenario, PsiModel, ScenarioTable, ZetaProcess};
use crate::error::{Error, Result};
use crate::estimand::{estimand_delta, Hypothesis, ModelParams};
use crate::gcomp::GcompConfig;
use crate::glmm::{McmcConfig, PriorSpec};
use crate::numeric::QuadratureRule;
use crate::ssd::AnalysisSettings;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IccSetting {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HypothesisConfig {
    /// Lower margin; absent means unbounded below.
    pub delta_lower: Option<f64>,
    pub delta_upper: f64,
}

impl Default for HypothesisConfig {
    fn default() -> Self {
        Self { delta_lower: None, delta_upper: 0.04 }
    }
}

impl HypothesisConfig {
    pub fn build(&self) -> Result<Hypothesis> {
        Hypothesis::new(self.delta_lower.unwrap_or(f64::NEG_INFINITY), self.delta_upper)
            .map_err(|e| Error::config("hypothesis", e.to_string()))
    }
}

/// How the decision threshold is calibrated across ICC settings and cluster counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMode {
    /// Calibrate at `c0` under the first ICC setting; reuse everywhere.
    FirstSetting,
    /// Calibrate at `c0` separately under each ICC setting.
    PerSetting,
    /// As `per-setting`, and also report a threshold recalibrated at every curve point.
    PerC,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { resamples: 10_000, level: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxyCheckConfig {
    /// Simulated clusters per `Lambda` estimate.
    pub n_mc: usize,
    pub cs: Vec<u64>,
    pub us: Vec<f64>,
    /// Treatment rates added to the scenario table, typically outside the alternative.
    pub extra_rates: Vec<f64>,
}

impl Default for ProxyCheckConfig {
    fn default() -> Self {
        Self {
            n_mc: 100_000,
            cs: vec![1_000, 10_000, 100_000],
            us: vec![0.1, 0.5, 0.9],
            extra_rates: vec![0.07],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    /// Repetitions per direct simulation; defaults to `m`.
    pub m: Option<usize>,
    /// Extra cluster counts simulated directly for curve overlays.
    pub grid: Vec<u32>,
}

/// Settings that affect speed and file locations but never results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutionConfig {
    pub workers: Option<usize>,
    pub out_dir: PathBuf,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        Self { workers: None, out_dir: PathBuf::from("out") }
    }
}

impl ExecutionConfig {
    pub fn worker_count(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub master_seed: u64,
    pub m: usize,
    pub c0: u32,
    /// Fixes `c1` instead of choosing it from projected power.
    pub c1: Option<u32>,
    pub alpha: f64,
    pub beta: f64,
    /// Fixes the decision threshold instead of calibrating it.
    pub gamma: Option<f64>,
    pub gamma_step: f64,
    pub gamma_mode: GammaMode,
    pub c_min: u32,
    /// Defaults to `10 * c0`.
    pub c_max: Option<u32>,
    pub curve_grid: Vec<u32>,
    /// Scenario label whose truth sits on the null boundary.
    pub null_scenario: String,
    /// Scenario label the power target applies to.
    pub design_scenario: String,
    /// Defaults to one per 500 repetitions for sampler models and 1 otherwise.
    pub subgroups: Option<usize>,
    pub hypothesis: HypothesisConfig,
    pub scenarios: ScenarioTable,
    pub icc: Vec<IccSetting>,
    pub zeta: ZetaProcess,
    pub priors: PriorSpec,
    pub mcmc: McmcConfig,
    pub gcomp: GcompConfig,
    pub bootstrap: BootstrapConfig,
    pub proxy_check: ProxyCheckConfig,
    pub validate: ValidateConfig,
    #[serde(skip_serializing)]
    pub execution: ExecutionConfig,
}

impl Default for DesignConfig {
    fn default() -> Self {
        let icc = |name: &str, value| IccSetting { name: name.into(), value };
        Self {
            master_seed: 20_240_601,
            m: 10_000,
            c0: 100,
            c1: None,
            alpha: 0.025,
            beta: 0.2,
            gamma: None,
            gamma_step: 0.01,
            gamma_mode: GammaMode::FirstSetting,
            c_min: 10,
            c_max: None,
            curve_grid: (80..=160).step_by(10).collect(),
            null_scenario: "unacceptable".into(),
            design_scenario: "clearly-acceptable".into(),
            subgroups: None,
            hypothesis: HypothesisConfig::default(),
            scenarios: ScenarioTable::default(),
            icc: vec![icc("low", 0.01), icc("moderate", 0.05), icc("high", 0.10)],
            zeta: ZetaProcess::default(),
            priors: PriorSpec::default(),
            mcmc: McmcConfig::default(),
            gcomp: GcompConfig::default(),
            bootstrap: BootstrapConfig::default(),
            proxy_check: ProxyCheckConfig::default(),
            validate: ValidateConfig::default(),
            execution: ExecutionConfig::default(),
        }
    }
}

fn in_unit(v: f64) -> bool {
    v > 0.0 && v < 1.0
}

impl DesignConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg = if is_json { Self::from_json(&text)? } else { Self::from_toml(&text)? };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            Error::config(toml_key(&e, text).unwrap_or_else(|| "config".into()), msg)
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::config("config", format!("line {} column {}: {e}", e.line(), e.column())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::config(key, msg));
        if !in_unit(self.alpha) {
            return bad("alpha", format!("must lie in (0, 1), got {}", self.alpha));
        }
        if !in_unit(self.beta) {
            return bad("beta", format!("must lie in (0, 1), got {}", self.beta));
        }
        if self.m < 100 {
            return bad("m", format!("must be >= 100, got {}", self.m));
        }
        if self.c0 < 2 {
            return bad("c0", format!("must be >= 2, got {}", self.c0));
        }
        if let Some(c1) = self.c1 {
            if c1 < 2 || c1 == self.c0 {
                return bad("c1", format!("must be >= 2 and differ from c0, got {c1}"));
            }
        }
        if let Some(g) = self.gamma {
            if !(0.0..=1.0).contains(&g) {
                return bad("gamma", format!("must lie in [0, 1], got {g}"));
            }
        }
        if !(self.gamma_step > 0.0 && self.gamma_step <= 0.5) {
            return bad("gamma_step", format!("must lie in (0, 0.5], got {}", self.gamma_step));
        }
        if self.c_min < 2 || self.c_min > self.c_max() {
            return bad("c_min", format!("need 2 <= c_min <= c_max, got {}..={}", self.c_min, self.c_max()));
        }
        if self.curve_grid.iter().any(|&c| c < 2) {
            return bad("curve_grid", "cluster counts must be >= 2".into());
        }
        if let Some(g) = self.subgroups {
            if g == 0 || g > self.m {
                return bad("subgroups", format!("must lie in 1..=m, got {g}"));
            }
        }
        self.hypothesis.build()?;
        self.scenarios.validate().map_err(|e| Error::config("scenarios", e.to_string()))?;
        for (key, label) in [("null_scenario", &self.null_scenario), ("design_scenario", &self.design_scenario)] {
            if self.scenarios.get(label).is_none() {
                return bad(key, format!("no scenario labelled {label:?}"));
            }
        }
        let mut labels: Vec<&str> = self.scenarios.treatments.iter().map(|t| t.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("scenarios.treatments", "labels must be unique".into());
        }
        if self.icc.is_empty() {
            return bad("icc", "at least one ICC setting is required".into());
        }
        for s in &self.icc {
            if !(0.0..1.0).contains(&s.value) {
                return bad("icc", format!("setting {} has value {} outside [0, 1)", s.name, s.value));
            }
            if s.name.is_empty() || !s.name.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '-' || ch == '_') {
                return bad("icc", format!("setting name {:?} must be non-empty [A-Za-z0-9_-]", s.name));
            }
        }
        let mut names: Vec<&str> = self.icc.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("icc", "setting names must be unique".into());
        }
        self.zeta.cluster_size.validate().map_err(|e| Error::config("zeta", e.to_string()))?;
        self.priors.validate().map_err(|e| Error::config("priors", e.to_string()))?;
        self.mcmc.validate().map_err(|e| Error::config("mcmc", e.to_string()))?;
        self.gcomp.validate().map_err(|e| Error::config("gcomp", e.to_string()))?;
        if self.bootstrap.resamples < 100 {
            return bad("bootstrap.resamples", format!("must be >= 100, got {}", self.bootstrap.resamples));
        }
        if !in_unit(self.bootstrap.level) {
            return bad("bootstrap.level", format!("must lie in (0, 1), got {}", self.bootstrap.level));
        }
        if self.proxy_check.cs.iter().any(|&c| c < 2) {
            return bad("proxy_check.cs", "cluster counts must be >= 2".into());
        }
        if self.proxy_check.us.iter().any(|&u| !in_unit(u)) {
            return bad("proxy_check.us", "quantile levels must lie in (0, 1)".into());
        }
        if self.proxy_check.extra_rates.iter().any(|&r| !in_unit(r)) {
            return bad("proxy_check.extra_rates", "rates must lie in (0, 1)".into());
        }
        if self.proxy_check.n_mc < 40 {
            return bad("proxy_check.n_mc", "must be >= 40".into());
        }
        if self.validate.m.is_some_and(|m| m < 100) {
            return bad("validate.m", "must be >= 100".into());
        }
        if self.execution.workers == Some(0) {
            return bad("execution.workers", "must be >= 1".into());
        }
        Ok(())
    }

    pub fn c_max(&self) -> u32 {
        self.c_max.unwrap_or(10 * self.c0)
    }

    pub fn validate_m(&self) -> usize {
        self.validate.m.unwrap_or(self.m)
    }

    pub fn analysis(&self) -> Result<AnalysisSettings> {
        Ok(AnalysisSettings {
            priors: self.priors,
            mcmc: self.mcmc,
            hypothesis: self.hypothesis.build()?,
            gcomp: self.gcomp,
        })
    }

    /// Keeps only the named ICC settings, or adds an unnamed one for a numeric value.
    pub fn select_icc(&mut self, selector: &str) -> Result<()> {
        if let Some(s) = self.icc.iter().find(|s| s.name == selector) {
            self.icc = vec![s.clone()];
            return Ok(());
        }
        match selector.parse::<f64>() {
            Ok(v) if (0.0..1.0).contains(&v) => {
                self.icc = vec![IccSetting { name: format!("icc{v}"), value: v }];
                Ok(())
            }
            _ => Err(Error::config("icc", format!("no setting named {selector:?} and not a value in [0, 1)"))),
        }
    }

    /// Canonical JSON of everything that determines results.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Hex SHA-256 of [`Self::echo`].
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.echo()).expect("config serializes");
        Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Dotted key path of a TOML error, recovered from its span.
fn toml_key(err: &toml::de::Error, text: &str) -> Option<String> {
    let span = err.span()?;
    let line_start = text[..span.start].rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next()?;
    let key = line.split('=').next()?.trim().trim_matches(|c| c == '[' || c == ']');
    let table = text[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').to_string());
    if key.is_empty() {
        return table;
    }
    if line.trim_start().starts_with('[') {
        return Some(key.to_string());
    }
    Some(match table {
        Some(t) => format!("{t}.{key}"),
        None => key.to_string(),
    })
}

/// One scenario under one ICC setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioModel {
    pub label: String,
    pub rate: f64,
    pub theta: ModelParams,
    pub delta: f64,
}

impl ScenarioModel {
    pub fn psi(&self) -> PsiModel {
        PsiModel::degenerate(self.label.clone(), self.theta)
    }
}

/// True parameters of every scenario under `icc`.
pub fn scenario_models(cfg: &DesignConfig, icc: f64, rule: &QuadratureRule) -> Result<Vec<ScenarioModel>> {
    let reference = cfg.scenarios.reference_rate;
    cfg.scenarios
        .treatments
        .iter()
        .map(|t| {
            let theta = build_theta_for_scenario(reference, t.rate, icc, rule)?;
            Ok(ScenarioModel {
                label: t.label.clone(),
                rate: t.rate,
                theta,
                delta: estimand_delta(&theta, rule)?,
            })
        })
        .collect()
}

/// Resolves `path` against the directory holding the config when relative.
pub fn resolve_relative(config_path: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        config_path.parent().map_or_else(|| path.to_path_buf(), |d| d.join(path))
    }
}
