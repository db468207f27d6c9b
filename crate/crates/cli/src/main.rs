//! `clusterssd`: design studies for Bayesian cluster-randomized trials.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clusterssd::config::DesignConfig;
use clusterssd::study::{self, RunContext};
use clusterssd::Error;

#[derive(Parser)]
#[command(name = "clusterssd", version, about = "Cluster counts for Bayesian cluster-randomized trials")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Design config (TOML, or JSON by extension). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Simulation repetitions per sample.
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    c0: Option<u32>,
    /// ICC setting name from the config, or a value in [0, 1).
    #[arg(long, global = true)]
    icc: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate, simulate at two cluster counts, recommend and bootstrap.
    Ssd,
    /// Operating-characteristic curves of every scenario without a recommendation.
    OcCurve,
    /// Slope-convergence table of the proxy model.
    ProxyCheck,
    /// Decision threshold at c0 for each ICC setting.
    CalibrateGamma,
    /// Direct simulation at the recommended cluster count of an earlier `ssd` run.
    Validate {
        /// Cluster count to validate at instead of the recommendation.
        #[arg(long)]
        c: Option<u32>,
    },
}

fn load(common: &Common) -> Result<DesignConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => {
            let mut cfg = DesignConfig::from_path(path)?;
            cfg.execution.out_dir = clusterssd::config::resolve_relative(path, &cfg.execution.out_dir);
            cfg
        }
        None => DesignConfig::default(),
    };
    if let Some(v) = common.seed {
        cfg.master_seed = v;
    }
    if let Some(v) = common.workers {
        cfg.execution.workers = Some(v);
    }
    if let Some(v) = &common.out_dir {
        cfg.execution.out_dir = v.clone();
    }
    if let Some(v) = common.m {
        cfg.m = v;
    }
    if let Some(v) = common.c0 {
        cfg.c0 = v;
    }
    if let Some(v) = &common.icc {
        cfg.select_icc(v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::InvalidInput(_) => 2,
        Error::TargetUnreachable { .. } => 4,
        Error::RootFinding(_)
        | Error::SingularInformation { .. }
        | Error::SamplerInit(_)
        | Error::Repetition { .. }
        | Error::Calibration { .. } => 3,
        Error::Artifact(_) | Error::Io(_) => 1,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = load(&cli.common)?;
    let ctx = RunContext::from_config(&cfg);
    match &cli.command {
        Command::Ssd => {
            let res = study::run_ssd(&cfg, &ctx)?;
            println!("icc_setting\tgamma\tc0\tc1\tc2\tpower_at_c2\tci");
            for s in &res.settings {
                if let Some(r) = &s.result {
                    println!(
                        "{}\t{}\t{}\t{}\t{}\t{:.4}\t[{}, {}]",
                        s.icc_setting, r.gamma, r.c0, r.c1, r.c2, r.power_at_c2, r.ci_lower, r.ci_upper
                    );
                } else if let Some(u) = &s.unreachable {
                    println!("{}\tunreachable (max power {:.4} at c = {})", s.icc_setting, u.max_power, u.argmax);
                }
            }
            if let Some(e) = res.unreachable_error() {
                return Err(e);
            }
        }
        Command::OcCurve => {
            let rows = study::run_oc_curve(&cfg, &ctx)?;
            println!("icc_setting\tscenario\tc\testimate\tband_lo\tband_hi");
            for r in &rows {
                println!(
                    "{}\t{}\t{}\t{:.4}\t{}\t{}",
                    r.icc_setting, r.scenario, r.c, r.estimate, fmt_opt(r.band_lo), fmt_opt(r.band_hi)
                );
            }
        }
        Command::ProxyCheck => {
            let rows = study::run_proxy_check(&cfg, &ctx)?;
            println!("icc_setting\tscenario\tdelta_r\tu\tc\tnumeric_slope\ttheorem_slope\trel_error");
            for r in &rows {
                println!(
                    "{}\t{}\t{:.5}\t{}\t{}\t{:.6e}\t{:.6e}\t{:.3e}",
                    r.icc_setting, r.scenario, r.delta_r, r.u, r.c, r.numeric_slope, r.theorem_slope, r.rel_error
                );
            }
        }
        Command::CalibrateGamma => {
            let out = study::run_calibrate_gamma(&cfg, &ctx)?;
            println!("icc_setting\tc0\tgamma\tnull_oc");
            for r in &out.settings {
                println!("{}\t{}\t{}\t{:.4}", r.icc_setting, r.c0, r.gamma, r.null_oc);
            }
        }
        Command::Validate { c } => {
            let v = study::run_validate(&cfg, &ctx, *c)?;
            println!("icc_setting\tscenario\tc\talg1\tdirect\tgap\tdirect_se");
            for r in &v.rows {
                println!(
                    "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                    r.icc_setting, r.scenario, r.c, r.alg1_estimate, r.direct_estimate, r.abs_gap, r.direct_se
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
