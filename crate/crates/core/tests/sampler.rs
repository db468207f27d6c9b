use clusterssd::datagen::{build_theta_for_scenario, simulate_trial, TrialData, ZetaProcess};
use clusterssd::estimand::sigma_from_icc;
use clusterssd::gcomp::{marginalize_dirichlet, marginalize_parametric};
use clusterssd::glmm::{sample_posterior, McmcConfig, PriorSpec};
use clusterssd::numeric::{expit, QuadratureRule};
use clusterssd::rng::substream;

fn trial(events: &[(u32, u32, u8)]) -> TrialData {
    let sizes = events.iter().map(|e| e.0).collect();
    let arms = events.iter().map(|e| e.2).collect();
    let outcomes = events
        .iter()
        .map(|&(n, y, _)| (0..n).map(|i| u8::from(i < y)).collect())
        .collect();
    TrialData::new(sizes, arms, outcomes).unwrap()
}

fn normal_ln_pdf(x: f64, sd: f64) -> f64 {
    -0.5 * (x / sd).powi(2) - sd.ln()
}

/// Log marginal likelihood of one cluster, cluster effect integrated on a dense grid.
fn cluster_ln_lik(eta: f64, sigma: f64, n: f64, y: f64) -> f64 {
    let h = 0.02;
    let mut terms = Vec::with_capacity(801);
    for k in 0..=800 {
        let z = -8.0 + h * f64::from(k);
        let p = expit(eta + sigma * z);
        terms.push(y * p.ln() + (n - y) * (1.0 - p).ln() - 0.5 * z * z);
    }
    let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    mx + (terms.iter().map(|t| (t - mx).exp()).sum::<f64>() * h).ln()
}

/// CDF of `beta1` for a one-cluster-per-arm trial by grid integration over
/// the arm intercepts and `sigma`, on the lattice `lo + k h`.
fn beta1_cdf_grid(n: [f64; 2], y: [f64; 2], priors: &PriorSpec) -> (f64, f64, Vec<f64>) {
    let h = 0.1;
    let a_lo = -14.0;
    let na = 281;
    let ns = 100;
    let ds = 0.05;
    let sigmas: Vec<f64> = (0..ns).map(|k| ds * (k as f64 + 0.5)).collect();
    let a = |i: usize| a_lo + h * i as f64;
    let lik: Vec<Vec<Vec<f64>>> = (0..2)
        .map(|arm| {
            (0..na)
                .map(|i| sigmas.iter().map(|&s| cluster_ln_lik(a(i), s, n[arm], y[arm])).collect())
                .collect()
        })
        .collect();
    let mut logw = Vec::with_capacity(na * na * ns);
    let mut mx = f64::NEG_INFINITY;
    for i in 0..na {
        for j in 0..na {
            let b0 = a(i);
            let b1 = a(j) - a(i);
            let lp = normal_ln_pdf(b0 - priors.beta0.mean, priors.beta0.sd) + normal_ln_pdf(b1 - priors.beta1.mean, priors.beta1.sd);
            for (k, &s) in sigmas.iter().enumerate() {
                let v = lp - 0.5 * (s / priors.sigma_scale).powi(2) + lik[0][i][k] + lik[1][j][k];
                mx = mx.max(v);
                logw.push(v);
            }
        }
    }
    // beta1 = a_j - a_i lies on a lattice of step h from -(na - 1) h.
    let mut mass = vec![0.0; 2 * na - 1];
    let mut idx = 0;
    for i in 0..na {
        for j in 0..na {
            for _ in 0..ns {
                mass[j + na - 1 - i] += (logw[idx] - mx).exp();
                idx += 1;
            }
        }
    }
    let total: f64 = mass.iter().sum();
    let mut cdf = Vec::with_capacity(mass.len());
    let mut acc = 0.0;
    for m in &mass {
        acc += m / total;
        cdf.push(acc);
    }
    (-(na as f64 - 1.0) * h, h, cdf)
}

/// Grid CDF at `x`, spreading each lattice mass uniformly over its cell.
fn eval_cdf(lo: f64, h: f64, cdf: &[f64], x: f64) -> f64 {
    let t = (x - lo) / h + 0.5;
    if t <= 0.0 {
        return 0.0;
    }
    let k = t.floor() as usize;
    if k >= cdf.len() {
        return 1.0;
    }
    let below = if k == 0 { 0.0 } else { cdf[k - 1] };
    below + (cdf[k] - below) * (t - k as f64)
}

#[test]
fn frozen_kernel_matches_grid_posterior() {
    let data = trial(&[(20, 5, 0), (20, 12, 1)]);
    let priors = PriorSpec::default();
    let thin = 100;
    let cfg = McmcConfig { burnin: 0, retained: 2000 * thin, ..McmcConfig::default() };
    let draws = sample_posterior(&data, &priors, &cfg, &mut substream(11, "frozen", &[])).unwrap();
    let mut sample: Vec<f64> = draws.beta1.iter().step_by(thin).copied().collect();
    assert_eq!(sample.len(), 2000);
    sample.sort_by(f64::total_cmp);
    let (lo, h, cdf) = beta1_cdf_grid([20.0, 20.0], [5.0, 12.0], &priors);
    let n = sample.len() as f64;
    let ks = sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = eval_cdf(lo, h, &cdf, x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.05, "KS distance {ks}");
}

#[test]
fn posterior_concentrates_on_truth_at_500_clusters() {
    let rule = QuadratureRule::default();
    let theta = build_theta_for_scenario(0.02, 0.05, 0.05, &rule).unwrap();
    let data = simulate_trial(&theta, &ZetaProcess::fixed(5), 500, &mut substream(3, "c500", &[])).unwrap();
    let draws = sample_posterior(&data, &PriorSpec::default(), &McmcConfig::default(), &mut substream(3, "c500-mcmc", &[])).unwrap();
    let dp = marginalize_parametric(&draws, &rule);
    assert!((dp.mean() - 0.03).abs() < 3.0 * dp.sd(), "mean {} sd {}", dp.mean(), dp.sd());
}

#[test]
fn acceptance_rates_stay_in_band_across_scenarios() {
    let rule = QuadratureRule::default();
    for (k, &rate) in [0.02, 0.03, 0.05, 0.06].iter().enumerate() {
        for &icc in &[0.01, 0.10] {
            let theta = build_theta_for_scenario(0.02, rate, icc, &rule).unwrap();
            for r in 0..5u64 {
                let mut rng = substream(5, "health", &[k as u64, icc.to_bits(), r]);
                let data = simulate_trial(&theta, &ZetaProcess::default(), 100, &mut rng).unwrap();
                let d = sample_posterior(&data, &PriorSpec::default(), &McmcConfig::default(), &mut rng).unwrap();
                for (name, a) in [("pair", d.accept.pair), ("log sigma", d.accept.log_sigma), ("effects", d.accept.effects)] {
                    assert!((0.1..=0.6).contains(&a), "rate {rate} icc {icc} rep {r}: {name} acceptance {a}");
                }
            }
        }
    }
}

/// Standard error of a mean by batch means over 20 batches.
fn batch_se(x: &[f64]) -> f64 {
    let b = 20;
    let len = x.len() / b;
    let means: Vec<f64> = (0..b).map(|k| x[k * len..(k + 1) * len].iter().sum::<f64>() / len as f64).collect();
    let m = means.iter().sum::<f64>() / b as f64;
    let v = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (b as f64 - 1.0);
    (v / b as f64).sqrt()
}

#[test]
fn marginalization_paths_agree_on_large_trials() {
    let rule = QuadratureRule::default();
    let theta = build_theta_for_scenario(0.02, 0.05, 0.05, &rule).unwrap();
    assert!(theta.sigma > 0.9 * sigma_from_icc(0.05).unwrap());
    for (seed, c) in [(1u64, 200usize), (2, 400)] {
        let mut rng = substream(seed, "paths", &[]);
        let data = simulate_trial(&theta, &ZetaProcess::fixed(5), c, &mut rng).unwrap();
        let cfg = McmcConfig { retained: 4000, ..McmcConfig::default() };
        let draws = sample_posterior(&data, &PriorSpec::default(), &cfg, &mut rng).unwrap();
        let p = marginalize_parametric(&draws, &rule);
        let d = marginalize_dirichlet(&draws, 1, &mut rng).unwrap();
        let se = (batch_se(&p.draws).powi(2) + batch_se(&d.draws).powi(2)).sqrt();
        assert!((p.mean() - d.mean()).abs() < 3.0 * se, "c {c}: {} vs {} (se {se})", p.mean(), d.mean());
    }
}
