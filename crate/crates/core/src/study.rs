//! Design studies built from a [`DesignConfig`]: the two-point procedure over
//! every ICC setting, direct-simulation validation, threshold calibration
//! and the slope check of the proxy model.
//!
//! Each command runs on its own rayon pool, writes its artifacts into the
//! output directory and finishes with a manifest.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::artifacts::{
    read_csv, read_json, samples_from_rows, tau_rows, ArtifactSet, CurveRow, Manifest, PhaseTiming, ProxyCheckRow,
    TauRow, ValidationRow, KIND_CURVE, KIND_PROXY_CHECK, KIND_TAUS, KIND_VALIDATION,
};
use crate::config::{scenario_models, DesignConfig, GammaMode, IccSetting, ScenarioModel, SCHEMA_VERSION};
use crate::datagen::build_theta_for_scenario;
use crate::error::{Error, Result};
use crate::estimand::estimand_delta;
use crate::numeric::QuadratureRule;
use crate::proxy::{convergence_table, estimate_lambda};
use crate::rng::{child_seed, substream};
use crate::ssd::{
    bootstrap_study, calibrate_gamma, calibrate_gamma_at, choose_c1, default_subgroups, estimate_oc,
    find_min_clusters, fit_logit_lines, predict_power, simulate_tau_sample, BootstrapSpec, C1Choice,
    LogitLineFamily, OcPoint, SsdResult, TauSample,
};

pub const RESULT_FILE: &str = "result.json";
pub const CURVE_FILE: &str = "oc_curve.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn tau_archive_name(icc_setting: &str) -> String {
    format!("taus_{icc_setting}.csv")
}

/// Where and how a command runs; never affects results.
#[derive(Debug, Clone, PartialEq)]
pub struct RunContext {
    pub out_dir: PathBuf,
    pub workers: usize,
}

impl RunContext {
    pub fn from_config(cfg: &DesignConfig) -> Self {
        Self {
            out_dir: cfg.execution.out_dir.clone(),
            workers: cfg.execution.worker_count(),
        }
    }
}

struct Timer {
    started: Instant,
    started_unix: u64,
    phases: Vec<PhaseTiming>,
}

impl Timer {
    fn new() -> Self {
        Self {
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            phases: Vec::new(),
        }
    }

    fn phase<T>(&mut self, name: impl Into<String>, f: impl FnOnce() -> T) -> T {
        let name = name.into();
        log::info!("{name}");
        let t = Instant::now();
        let out = f();
        self.phases.push(PhaseTiming { name, seconds: t.elapsed().as_secs_f64() });
        out
    }

    fn manifest(self, command: &str, cfg: &DesignConfig, workers: usize) -> Manifest {
        Manifest {
            schema_version: SCHEMA_VERSION,
            kind: "manifest".into(),
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: cfg.hash(),
            master_seed: cfg.master_seed,
            config: cfg.echo(),
            workers,
            started_unix: self.started_unix,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            phases: self.phases,
            artifacts: Vec::new(),
        }
    }
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(f)
}

/// Line-based curve of one scenario under one ICC setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCurve {
    pub scenario: String,
    pub subgroups: usize,
    /// Threshold used at each curve point.
    pub gammas: Vec<f64>,
    pub points: Vec<OcPoint>,
    /// Empirical OC of the simulated samples at `c0` and `c1`.
    pub oc_c0: f64,
    pub oc_c1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingResult {
    pub icc_setting: String,
    pub icc: f64,
    pub scenarios: Vec<ScenarioModel>,
    /// How `c1` was chosen, when it was not fixed.
    pub c1_choice: Option<C1Choice>,
    /// `Lambda` of the design scenario used to project `c1`.
    pub lambda: Option<f64>,
    /// Absent for curve-only runs and when the target is unreachable.
    pub result: Option<SsdResult>,
    pub unreachable: Option<Unreachable>,
    pub curves: Vec<ScenarioCurve>,
}

/// The power target was not met anywhere in the search range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Unreachable {
    pub c_min: u32,
    pub c_max: u32,
    pub max_power: f64,
    pub argmax: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub schema_version: u32,
    pub kind: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub config: serde_json::Value,
    pub settings: Vec<SettingResult>,
}

impl StudyResult {
    pub fn setting(&self, name: &str) -> Option<&SettingResult> {
        self.settings.iter().find(|s| s.icc_setting == name)
    }

    /// The first setting whose target was unreachable, as an error.
    pub fn unreachable_error(&self) -> Option<Error> {
        self.settings.iter().find_map(|s| {
            s.unreachable.map(|u| Error::TargetUnreachable {
                c_min: u.c_min,
                c_max: u.c_max,
                max_power: u.max_power,
                argmax: u.argmax,
            })
        })
    }
}

/// In-memory outcome of a design study.
#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub result: StudyResult,
    /// Tau samples of each ICC setting.
    pub samples: Vec<(String, Vec<TauSample>)>,
    pub curve_rows: Vec<CurveRow>,
}

fn scenario_index(models: &[ScenarioModel], label: &str) -> Result<usize> {
    models
        .iter()
        .position(|m| m.label == label)
        .ok_or_else(|| Error::config("scenarios", format!("no scenario labelled {label:?}")))
}

fn subgroups_for(cfg: &DesignConfig, model: &ScenarioModel) -> usize {
    cfg.subgroups.unwrap_or_else(|| default_subgroups(&model.psi(), cfg.m))
}

fn bootstrap_spec(cfg: &DesignConfig, label: &str, subgroups: usize) -> BootstrapSpec {
    BootstrapSpec {
        resamples: cfg.bootstrap.resamples,
        level: cfg.bootstrap.level,
        subgroups,
        c_min: cfg.c_min,
        c_max: cfg.c_max(),
        seed: child_seed(cfg.master_seed, &format!("bootstrap/{label}"), &[]),
    }
}

/// Thresholds shared across ICC settings in `first-setting` mode.
#[derive(Default)]
struct Shared {
    gamma: Option<f64>,
    c1: Option<(u32, Option<C1Choice>, Option<f64>)>,
}

#[allow(clippy::too_many_lines)]
fn run_setting(
    cfg: &DesignConfig,
    setting: &IccSetting,
    with_recommendation: bool,
    shared: &mut Shared,
    timer: &mut Timer,
    rule: &QuadratureRule,
) -> Result<(SettingResult, Vec<TauSample>, Vec<CurveRow>)> {
    let analysis = cfg.analysis()?;
    let name = &setting.name;
    let models = scenario_models(cfg, setting.value, rule)?;
    let n = models.len();
    let null_k = scenario_index(&models, &cfg.null_scenario)?;
    let design_k = scenario_index(&models, &cfg.design_scenario)?;
    let sample = |k: usize, c: u32| simulate_tau_sample(&models[k].psi(), &cfg.zeta, c, cfg.m, &analysis, cfg.master_seed);

    let mut at_c0: Vec<Option<TauSample>> = vec![None; n];
    at_c0[null_k] = Some(timer.phase(format!("{name}: {} at c0 = {}", cfg.null_scenario, cfg.c0), || sample(null_k, cfg.c0))?);
    let gamma = match (cfg.gamma, cfg.gamma_mode, shared.gamma) {
        (Some(g), _, _) => g,
        (None, GammaMode::FirstSetting, Some(g)) => g,
        _ => calibrate_gamma(at_c0[null_k].as_ref().expect("simulated"), cfg.alpha, cfg.gamma_step)?,
    };
    shared.gamma.get_or_insert(gamma);
    log::info!("{name}: gamma = {gamma}");

    if at_c0[design_k].is_none() {
        at_c0[design_k] = Some(timer.phase(format!("{name}: {} at c0 = {}", cfg.design_scenario, cfg.c0), || sample(design_k, cfg.c0))?);
    }
    let (c1, c1_choice, lambda) = match (cfg.c1, &shared.c1) {
        (Some(c1), _) => (c1, None, None),
        (None, Some(v)) => *v,
        (None, None) => {
            let design = &models[design_k];
            let est = timer.phase(format!("{name}: Lambda for {}", design.label), || {
                estimate_lambda(&design.theta, &cfg.zeta, cfg.proxy_check.n_mc, rule, &mut substream(cfg.master_seed, "c1-lambda", &[]))
            })?;
            let choice = choose_c1(
                at_c0[design_k].as_ref().expect("simulated"),
                gamma,
                cfg.beta,
                &est,
                &analysis.hypothesis,
                cfg.c_max(),
            )?;
            (choice.c1, Some(choice), Some(est.lambda))
        }
    };
    shared.c1.get_or_insert((c1, c1_choice, lambda));
    log::info!("{name}: c1 = {c1}");

    for k in 0..n {
        if at_c0[k].is_none() {
            at_c0[k] = Some(timer.phase(format!("{name}: {} at c0 = {}", models[k].label, cfg.c0), || sample(k, cfg.c0))?);
        }
    }
    let at_c0: Vec<TauSample> = at_c0.into_iter().map(|s| s.expect("simulated")).collect();
    let mut at_c1 = Vec::with_capacity(n);
    for (k, model) in models.iter().enumerate() {
        at_c1.push(timer.phase(format!("{name}: {} at c1 = {c1}", model.label), || sample(k, c1))?);
    }

    let lines: Vec<LogitLineFamily> = (0..n)
        .map(|k| fit_logit_lines(&at_c0[k], &at_c1[k], subgroups_for(cfg, &models[k])))
        .collect::<Result<_>>()?;
    let grid = &cfg.curve_grid;
    let grid_gammas: Vec<f64> = match cfg.gamma_mode {
        GammaMode::PerC => grid
            .iter()
            .map(|&c| calibrate_gamma_at(&lines[null_k], c, cfg.alpha, cfg.gamma_step))
            .collect::<Result<_>>()?,
        _ => vec![gamma; grid.len()],
    };

    let mut unreachable = None;
    let c2 = if with_recommendation {
        match find_min_clusters(&lines[design_k], gamma, cfg.beta, cfg.c_min, cfg.c_max()) {
            Ok(c) => Some(c),
            Err(Error::TargetUnreachable { c_min, c_max, max_power, argmax }) => {
                log::warn!("{name}: power {} not reached; max {max_power} at c = {argmax}", 1.0 - cfg.beta);
                unreachable = Some(Unreachable { c_min, c_max, max_power, argmax });
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    let mut curves = Vec::with_capacity(n);
    let mut summary = None;
    for (k, model) in models.iter().enumerate() {
        let beta = (k == design_k && c2.is_some()).then_some(cfg.beta);
        let spec = bootstrap_spec(cfg, &model.label, lines[k].subgroup_count);
        let (s, points) = timer.phase(format!("{name}: bootstrap {}", model.label), || {
            bootstrap_study(&lines[k], &at_c0[k], &at_c1[k], gamma, beta, grid, &grid_gammas, &spec)
        })?;
        if s.is_some() {
            summary = s;
        }
        curves.push(ScenarioCurve {
            scenario: model.label.clone(),
            subgroups: lines[k].subgroup_count,
            gammas: grid_gammas.clone(),
            points,
            oc_c0: estimate_oc(&at_c0[k], gamma),
            oc_c1: estimate_oc(&at_c1[k], gamma),
        });
    }

    let result = c2.map(|c2| {
        let s = summary.expect("design bootstrap ran");
        SsdResult {
            gamma,
            c0: cfg.c0,
            c1,
            c2,
            power_at_c2: predict_power(&lines[design_k], c2, gamma),
            ci_lower: s.ci_lower,
            ci_upper: s.ci_upper,
            bootstrap_censored: s.censored,
            subgroups: lines[design_k].subgroup_count,
            oc_curve: curves[design_k].points.clone(),
        }
    });
    let rows = curves
        .iter()
        .flat_map(|cv| {
            cv.points.iter().zip(&cv.gammas).map(move |(p, &g)| CurveRow {
                icc_setting: name.clone(),
                scenario: cv.scenario.clone(),
                c: p.c,
                estimate: p.estimate,
                band_lo: Some(p.band_lo),
                band_hi: Some(p.band_hi),
                source: "alg1".into(),
                gamma: g,
            })
        })
        .collect();
    let samples = at_c0.into_iter().zip(at_c1).flat_map(|(a, b)| [a, b]).collect();
    Ok((
        SettingResult {
            icc_setting: name.clone(),
            icc: setting.value,
            scenarios: models,
            c1_choice,
            lambda,
            result,
            unreachable,
            curves,
        },
        samples,
        rows,
    ))
}

fn design_study_timed(cfg: &DesignConfig, with_recommendation: bool, timer: &mut Timer) -> Result<Study> {
    cfg.validate()?;
    let rule = QuadratureRule::gauss_hermite(cfg.gcomp.quadrature_order)?;
    let mut shared = Shared::default();
    let mut settings = Vec::new();
    let mut samples = Vec::new();
    let mut curve_rows = Vec::new();
    for setting in &cfg.icc {
        let (res, s, rows) = run_setting(cfg, setting, with_recommendation, &mut shared, timer, &rule)?;
        settings.push(res);
        samples.push((setting.name.clone(), s));
        curve_rows.extend(rows);
    }
    Ok(Study {
        result: StudyResult {
            schema_version: SCHEMA_VERSION,
            kind: "ssd-result".into(),
            config_hash: cfg.hash(),
            master_seed: cfg.master_seed,
            config: cfg.echo(),
            settings,
        },
        samples,
        curve_rows,
    })
}

/// Runs the two-point procedure under every ICC setting without writing anything.
///
/// Parallel work runs on the current rayon pool.
pub fn design_study(cfg: &DesignConfig, with_recommendation: bool) -> Result<Study> {
    design_study_timed(cfg, with_recommendation, &mut Timer::new())
}

fn write_study(study: &Study, set: &mut ArtifactSet, with_result: bool) -> Result<()> {
    for (name, samples) in &study.samples {
        let rows: Vec<TauRow> = samples.iter().flat_map(tau_rows).collect();
        set.csv(&tau_archive_name(name), KIND_TAUS, &rows)?;
    }
    set.csv(CURVE_FILE, KIND_CURVE, &study.curve_rows)?;
    if with_result {
        set.json(RESULT_FILE, "ssd-result", &study.result)?;
    }
    Ok(())
}

/// Full procedure: writes tau archives, the curve table, `result.json` and `manifest.json`.
///
/// An unreachable target is recorded in the result rather than returned as
/// an error, so the artifacts are still written.
pub fn run_ssd(cfg: &DesignConfig, ctx: &RunContext) -> Result<StudyResult> {
    let mut timer = Timer::new();
    let study = in_pool(ctx.workers, || design_study_timed(cfg, true, &mut timer))?;
    let mut set = ArtifactSet::new(&ctx.out_dir)?;
    write_study(&study, &mut set, true)?;
    set.finish(MANIFEST_FILE, timer.manifest("ssd", cfg, ctx.workers))?;
    Ok(study.result)
}

/// Curves only: writes tau archives, the curve table and `manifest-oc-curve.json`.
pub fn run_oc_curve(cfg: &DesignConfig, ctx: &RunContext) -> Result<Vec<CurveRow>> {
    let mut timer = Timer::new();
    let study = in_pool(ctx.workers, || design_study_timed(cfg, false, &mut timer))?;
    let mut set = ArtifactSet::new(&ctx.out_dir)?;
    write_study(&study, &mut set, false)?;
    set.finish("manifest-oc-curve.json", timer.manifest("oc-curve", cfg, ctx.workers))?;
    Ok(study.curve_rows)
}

/// Line families of every scenario rebuilt from a setting's tau archive.
pub fn lines_from_archive(
    cfg: &DesignConfig,
    setting: &SettingResult,
    c1: u32,
    archive: &Path,
) -> Result<Vec<(String, LogitLineFamily)>> {
    let rows: Vec<TauRow> = read_csv(archive, KIND_TAUS)?;
    let samples = samples_from_rows(&rows, cfg.master_seed)?;
    let find = |label: &str, c: u32| {
        samples
            .iter()
            .find(|s| s.psi_label == label && s.c == c)
            .ok_or_else(|| Error::Artifact(format!("{}: no sample for {label} at c = {c}", archive.display())))
    };
    setting
        .scenarios
        .iter()
        .map(|m| {
            let lines = fit_logit_lines(find(&m.label, cfg.c0)?, find(&m.label, c1)?, subgroups_for(cfg, m))?;
            Ok((m.label.clone(), lines))
        })
        .collect()
}

/// Two-sided 95% Wald interval clipped to `[0, 1]`.
fn wald(p: f64, m: usize) -> (f64, f64, f64) {
    let se = (p * (1.0 - p) / m as f64).sqrt();
    (se, (p - 1.96 * se).max(0.0), (p + 1.96 * se).min(1.0))
}

/// Outcome of direct-simulation validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub rows: Vec<ValidationRow>,
    pub curve_rows: Vec<CurveRow>,
}

/// Simulates every scenario directly at the recommended cluster count
/// (or `c_override`) and at `validate.grid`, and compares with the line
/// predictions rebuilt from the tau archives in `result_dir`.
///
/// Direct repetitions draw from a stream family separate from the one used
/// for the line samples.
pub fn validate_study(cfg: &DesignConfig, result_dir: &Path, c_override: Option<u32>) -> Result<(Validation, Vec<(String, Vec<TauSample>)>)> {
    cfg.validate()?;
    let result: StudyResult = read_json(&result_dir.join(RESULT_FILE))?;
    if result.config_hash != cfg.hash() && !same_study(&result.config, &cfg.echo()) {
        return Err(Error::config(
            "config",
            format!("{} was produced by a different configuration", result_dir.join(RESULT_FILE).display()),
        ));
    }
    let analysis = cfg.analysis()?;
    let m = cfg.validate_m();
    let direct_seed = child_seed(cfg.master_seed, "direct", &[]);
    let mut rows = Vec::new();
    let mut curve_rows = Vec::new();
    let mut archives = Vec::new();
    for setting in &cfg.icc {
        let res = result
            .setting(&setting.name)
            .ok_or_else(|| Error::config("icc", format!("result has no setting {:?}", setting.name)))?;
        let ssd = res
            .result
            .as_ref()
            .ok_or_else(|| Error::Artifact(format!("setting {} has no recommendation", setting.name)))?;
        let c = c_override.unwrap_or(ssd.c2);
        let lines = lines_from_archive(cfg, res, ssd.c1, &result_dir.join(tau_archive_name(&setting.name)))?;
        let mut cs = vec![c];
        cs.extend(cfg.validate.grid.iter().copied().filter(|&g| g != c));
        let mut samples = Vec::new();
        for model in &res.scenarios {
            let (_, family) = lines.iter().find(|(l, _)| *l == model.label).expect("one family per scenario");
            for &cc in &cs {
                let s = simulate_tau_sample(&model.psi(), &cfg.zeta, cc, m, &analysis, direct_seed)?;
                let direct = estimate_oc(&s, ssd.gamma);
                let (se, lo, hi) = wald(direct, m);
                let alg1 = predict_power(family, cc, ssd.gamma);
                if cc == c {
                    rows.push(ValidationRow {
                        icc_setting: setting.name.clone(),
                        scenario: model.label.clone(),
                        c: cc,
                        gamma: ssd.gamma,
                        alg1_estimate: alg1,
                        direct_estimate: direct,
                        abs_gap: (alg1 - direct).abs(),
                        direct_se: se,
                        m_direct: m,
                    });
                }
                curve_rows.push(CurveRow {
                    icc_setting: setting.name.clone(),
                    scenario: model.label.clone(),
                    c: cc,
                    estimate: direct,
                    band_lo: Some(lo),
                    band_hi: Some(hi),
                    source: "direct".into(),
                    gamma: ssd.gamma,
                });
                samples.push(s);
            }
        }
        archives.push((setting.name.clone(), samples));
    }
    Ok((Validation { rows, curve_rows }, archives))
}

/// Whether two config echoes agree on everything the design study reads.
fn same_study(a: &serde_json::Value, b: &serde_json::Value) -> bool {
    let strip = |v: &serde_json::Value| {
        let mut v = v.clone();
        if let Some(o) = v.as_object_mut() {
            o.remove("validate");
            o.remove("proxy_check");
            o.remove("icc");
        }
        v
    };
    strip(a) == strip(b)
}

/// Validation with artifacts: `validation.csv`, `oc_curve_direct.csv`,
/// direct tau archives and `manifest-validate.json`.
pub fn run_validate(cfg: &DesignConfig, ctx: &RunContext, c_override: Option<u32>) -> Result<Validation> {
    let mut timer = Timer::new();
    let (validation, archives) = in_pool(ctx.workers, || {
        timer.phase("direct simulation", || validate_study(cfg, &ctx.out_dir, c_override))
    })?;
    let mut set = ArtifactSet::new(&ctx.out_dir)?;
    for (name, samples) in &archives {
        let rows: Vec<TauRow> = samples.iter().flat_map(tau_rows).collect();
        set.csv(&format!("taus_direct_{name}.csv"), KIND_TAUS, &rows)?;
    }
    set.csv("validation.csv", KIND_VALIDATION, &validation.rows)?;
    set.csv("oc_curve_direct.csv", KIND_CURVE, &validation.curve_rows)?;
    set.finish("manifest-validate.json", timer.manifest("validate", cfg, ctx.workers))?;
    Ok(validation)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub icc_setting: String,
    pub c0: u32,
    pub gamma: f64,
    /// Null rejection rate at `gamma`.
    pub null_oc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaCalibration {
    pub schema_version: u32,
    pub kind: String,
    pub config_hash: String,
    pub settings: Vec<GammaRow>,
}

/// Calibrates the threshold at `c0` under each ICC setting; writes
/// `gamma.json`, the null tau archives and `manifest-calibrate-gamma.json`.
pub fn run_calibrate_gamma(cfg: &DesignConfig, ctx: &RunContext) -> Result<GammaCalibration> {
    cfg.validate()?;
    let mut timer = Timer::new();
    let rule = QuadratureRule::gauss_hermite(cfg.gcomp.quadrature_order)?;
    let analysis = cfg.analysis()?;
    let (rows, samples) = in_pool(ctx.workers, || {
        let mut rows = Vec::new();
        let mut samples = Vec::new();
        for setting in &cfg.icc {
            let models = scenario_models(cfg, setting.value, &rule)?;
            let null = &models[scenario_index(&models, &cfg.null_scenario)?];
            let s = timer.phase(format!("{}: {} at c0 = {}", setting.name, null.label, cfg.c0), || {
                simulate_tau_sample(&null.psi(), &cfg.zeta, cfg.c0, cfg.m, &analysis, cfg.master_seed)
            })?;
            let gamma = calibrate_gamma(&s, cfg.alpha, cfg.gamma_step)?;
            rows.push(GammaRow {
                icc_setting: setting.name.clone(),
                c0: cfg.c0,
                gamma,
                null_oc: estimate_oc(&s, gamma),
            });
            samples.push((setting.name.clone(), s));
        }
        Ok((rows, samples))
    })?;
    let out = GammaCalibration {
        schema_version: SCHEMA_VERSION,
        kind: "gamma-calibration".into(),
        config_hash: cfg.hash(),
        settings: rows,
    };
    let mut set = ArtifactSet::new(&ctx.out_dir)?;
    for (name, s) in &samples {
        set.csv(&format!("calibration_taus_{name}.csv"), KIND_TAUS, &tau_rows(s))?;
    }
    set.json("gamma.json", "gamma-calibration", &out)?;
    set.finish("manifest-calibrate-gamma.json", timer.manifest("calibrate-gamma", cfg, ctx.workers))?;
    Ok(out)
}

/// Slope-convergence rows for every scenario, plus `proxy_check.extra_rates`,
/// under every ICC setting.
pub fn proxy_check_rows(cfg: &DesignConfig) -> Result<Vec<ProxyCheckRow>> {
    cfg.validate()?;
    let rule = QuadratureRule::gauss_hermite(cfg.gcomp.quadrature_order)?;
    let hyp = cfg.hypothesis.build()?;
    let reference = cfg.scenarios.reference_rate;
    let mut rates: Vec<(String, f64)> = cfg.scenarios.treatments.iter().map(|t| (t.label.clone(), t.rate)).collect();
    rates.extend(cfg.proxy_check.extra_rates.iter().map(|&r| (format!("rate-{r}"), r)));
    let mut rows = Vec::new();
    for (i, setting) in cfg.icc.iter().enumerate() {
        for (k, (label, rate)) in rates.iter().enumerate() {
            let theta = build_theta_for_scenario(reference, *rate, setting.value, &rule)?;
            let delta_r = estimand_delta(&theta, &rule)?;
            let mut rng = substream(cfg.master_seed, "proxy-check/lambda", &[i as u64, k as u64]);
            let lambda = estimate_lambda(&theta, &cfg.zeta, cfg.proxy_check.n_mc, &rule, &mut rng)?.lambda;
            let points: Vec<(f64, f64, f64)> = cfg.proxy_check.us.iter().map(|&u| (delta_r, lambda, u)).collect();
            for r in convergence_table(&points, &cfg.proxy_check.cs, &hyp)? {
                rows.push(ProxyCheckRow {
                    icc_setting: setting.name.clone(),
                    scenario: label.clone(),
                    delta_r: r.delta_r,
                    lambda: r.lambda,
                    u: r.u,
                    c: r.c,
                    numeric_slope: r.numeric_slope,
                    theorem_slope: r.theorem_slope,
                    rel_error: r.rel_error,
                });
            }
        }
    }
    Ok(rows)
}

/// Writes `proxy_check.csv` and `manifest-proxy-check.json`.
pub fn run_proxy_check(cfg: &DesignConfig, ctx: &RunContext) -> Result<Vec<ProxyCheckRow>> {
    let mut timer = Timer::new();
    let rows = in_pool(ctx.workers, || timer.phase("convergence table", || proxy_check_rows(cfg)))?;
    let mut set = ArtifactSet::new(&ctx.out_dir)?;
    set.csv("proxy_check.csv", KIND_PROXY_CHECK, &rows)?;
    set.finish("manifest-proxy-check.json", timer.manifest("proxy-check", cfg, ctx.workers))?;
    Ok(rows)
}
