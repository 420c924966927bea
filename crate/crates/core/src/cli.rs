//! Subcommand implementations behind the `hdpmf` binary.

use std::fmt::Write as _;
use std::io::BufWriter;

use rand_distr::{Distribution, Exp1, Normal};

use crate::baselines::{self, Method};
use crate::config::{ConfigError, ExperimentConfig, SplitChoice};
use crate::error::{Error, Result};
use crate::eval::{self, ExperimentResult};
use crate::privacy::{laplace_scale, noise_share, personalized_budget};
use crate::protocol::{run_protocol, NoiseSetting, ProtocolOptions};
use crate::rng::{self, Purpose};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUN_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Exit status for an error: configuration problems are 2, the rest 1.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUN_FAILURE,
    }
}

/// Human-readable summary lines for a set of results.
pub fn summarize(results: &[ExperimentResult]) -> String {
    let mut out = String::new();
    for r in results {
        match r.summary {
            Some(s) => {
                let _ = writeln!(
                    out,
                    "{:<8} K={:<3} MSE {:.4} ± {:.4}  MAE {:.4} ± {:.4}  (n={}{})",
                    r.method.name(),
                    r.config.k,
                    s.mse_mean,
                    s.mse_std,
                    s.mae_mean,
                    s.mae_std,
                    s.n,
                    if r.is_partial() { ", partial" } else { "" }
                );
            }
            None => {
                let _ = writeln!(out, "{:<8} all seeds failed", r.method.name());
            }
        }
        for s in &r.seeds {
            if let Err(e) = &s.metrics {
                let _ = writeln!(out, "  failed: {e}");
            }
        }
    }
    let find = |m| results.iter().find(|r| r.method == m);
    if let (Some(h), Some(p)) = (find(Method::Hdpmf), find(Method::Pdpmf)) {
        if let Ok(t) = eval::paired_t_test(&h.mse_values(), &p.mse_values()) {
            let _ = writeln!(
                out,
                "paired t-test MSE hdpmf < pdpmf: t = {:.3}, significance {}",
                t.t,
                t.level.label()
            );
        }
    }
    out
}

/// Re-trains the first private method on the first seed through the
/// protocol, writing one trace line per update.
fn write_trace(cfg: &ExperimentConfig, dataset: &crate::model::RatingDataset) -> Result<()> {
    let Some(path) = &cfg.trace else {
        return Ok(());
    };
    let Some(&method) = cfg.methods.iter().find(|m| **m != Method::Mf) else {
        return Ok(());
    };
    let seed = cfg.seeds[0];
    let setup = eval::prepare_seed(dataset, cfg, seed)?;
    let tc = eval::train_config(cfg, method, seed);
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let eps = cfg.privacy.epsilon;
    let train = &setup.split.train;
    let (data, stretch, budget) = match method {
        Method::Hdpmf | Method::HdpmfR => (train.clone(), true, eps),
        Method::Dpmf => (train.clone(), false, baselines::dpmf_budget(train, &setup.weights, eps)?),
        _ => {
            let sampled = baselines::pdp_sample_ratings(
                train,
                |i, j| personalized_budget(setup.weights.weight(i, j), eps),
                eps,
                seed,
            )?;
            (sampled, false, eps)
        }
    };
    run_protocol(
        &data,
        &setup.weights,
        &tc,
        ProtocolOptions {
            stretch,
            noise: NoiseSetting::Laplace { epsilon: budget },
            instrument: false,
            trace: Some(&mut w),
        },
    )?;
    Ok(())
}

/// `run`: every configured method over every seed, written to
/// `cfg.output`. Returns the results and the printed summary.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<(Vec<ExperimentResult>, String)> {
    cfg.validate()?;
    let dataset = eval::load_dataset(cfg)?;
    let results = cfg
        .methods
        .iter()
        .map(|&m| eval::run_experiment_on(&dataset, cfg, m, &cfg.seeds))
        .collect::<Result<Vec<_>>>()?;
    eval::emit_results(&results, &cfg.output)?;
    write_trace(cfg, &dataset)?;
    let summary = summarize(&results);
    if results.iter().any(|r| r.summary.is_none()) {
        return Err(Error::Diverged {
            epoch: 0,
            what: format!("every seed failed for some method; see {}", cfg.output.display()),
        });
    }
    Ok((results, summary))
}

/// Keys `sweep` accepts.
pub const SWEEP_KEYS: [&str; 3] = ["eps_uc", "f_uc", "fraction"];

/// Configs for each sweep value. A `fraction` sweep switches to
/// leave-one-out splits; other parameters keep their configured values.
pub fn sweep_configs(base: &ExperimentConfig, key: &str, values: &[String]) -> Result<Vec<ExperimentConfig>> {
    if !SWEEP_KEYS.contains(&key) {
        return Err(ConfigError::Constraint {
            key: key.into(),
            message: format!("sweep key must be one of {}", SWEEP_KEYS.join(", ")),
        }
        .into());
    }
    if values.is_empty() {
        return Err(ConfigError::Constraint {
            key: key.into(),
            message: "no sweep values".into(),
        }
        .into());
    }
    values
        .iter()
        .map(|v| {
            let mut cfg = base.clone();
            cfg.set(key, v.trim())?;
            if key == "fraction" {
                cfg.split = SplitChoice::LeaveOneOut;
            }
            cfg.validate()?;
            Ok(cfg)
        })
        .collect()
}

/// `sweep`: the full seed set for every value of `key`, one combined file.
pub fn cmd_sweep(
    base: &ExperimentConfig,
    key: &str,
    values: &[String],
) -> Result<(Vec<ExperimentResult>, String)> {
    let configs = sweep_configs(base, key, values)?;
    let dataset = eval::load_dataset(base)?;
    let mut results = Vec::new();
    let mut summary = String::new();
    for (cfg, value) in configs.iter().zip(values) {
        let batch = cfg
            .methods
            .iter()
            .map(|&m| eval::run_experiment_on(&dataset, cfg, m, &cfg.seeds))
            .collect::<Result<Vec<_>>>()?;
        let _ = writeln!(summary, "{key} = {}", value.trim());
        summary.push_str(&summarize(&batch));
        results.extend(batch);
    }
    eval::emit_results(&results, &base.output)?;
    Ok((results, summary))
}

/// `tune`: cross-validated grid search for every configured method.
pub fn cmd_tune(cfg: &ExperimentConfig, folds: usize) -> Result<String> {
    cfg.validate()?;
    let dataset = eval::load_dataset(cfg)?;
    let mut out = String::new();
    for &method in &cfg.methods {
        let grid = eval::grid_search(&dataset, cfg, method, folds)?;
        for p in &grid {
            let _ = writeln!(
                out,
                "{} K={} lr={} lambda={} cv_mse={:.4}",
                method, cfg.k, p.learning_rate, p.lambda, p.mse
            );
        }
        if let Some(best) = grid.iter().min_by(|a, b| a.mse.total_cmp(&b.mse)) {
            let _ = writeln!(
                out,
                "best {} K={}: lr={} lambda={} cv_mse={:.4}",
                method, cfg.k, best.learning_rate, best.lambda, best.mse
            );
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseCheckParams {
    pub k: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub raters: usize,
    pub samples: usize,
    pub seed: u64,
}

/// Relative variance tolerance of `check-noise`.
pub const VARIANCE_TOLERANCE: f64 = 0.01;
/// Kolmogorov-Smirnov tolerance of `check-noise`.
pub const KS_TOLERANCE: f64 = 0.002;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseCheckReport {
    pub params: NoiseCheckParams,
    pub scale: f64,
    pub mean: f64,
    /// `3 σ / √n` with `σ² = 2b²`.
    pub mean_tolerance: f64,
    pub variance: f64,
    pub expected_variance: f64,
    pub variance_rel_error: f64,
    pub ks: f64,
}

impl NoiseCheckReport {
    pub fn mean_ok(&self) -> bool {
        self.mean.abs() <= self.mean_tolerance
    }

    pub fn variance_ok(&self) -> bool {
        self.variance_rel_error < VARIANCE_TOLERANCE
    }

    pub fn ks_ok(&self) -> bool {
        self.ks < KS_TOLERANCE
    }

    pub fn passed(&self) -> bool {
        self.mean_ok() && self.variance_ok() && self.ks_ok()
    }

    pub fn render(&self) -> String {
        let pf = |ok: bool| if ok { "PASS" } else { "FAIL" };
        let p = &self.params;
        format!(
            "aggregated noise: K={} delta={} epsilon={} raters={} samples={}\n\
             laplace scale b = {:.6}\n\
             mean      {:+.6} (|mean| <= {:.6})          {}\n\
             variance  {:.4} vs 2b^2 = {:.4} (rel err {:.5} < {})  {}\n\
             KS        {:.6} (< {})                        {}\n",
            p.k,
            p.delta,
            p.epsilon,
            p.raters,
            p.samples,
            self.scale,
            self.mean,
            self.mean_tolerance,
            pf(self.mean_ok()),
            self.variance,
            self.expected_variance,
            self.variance_rel_error,
            VARIANCE_TOLERANCE,
            pf(self.variance_ok()),
            self.ks,
            KS_TOLERANCE,
            pf(self.ks_ok()),
        )
    }
}

fn laplace_cdf(x: f64, b: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / b).exp()
    } else {
        1.0 - 0.5 * (-x / b).exp()
    }
}

/// Kolmogorov-Smirnov distance between `samples` and `Laplace(0, b)`.
/// Sorts `samples` in place.
pub fn ks_distance_laplace(samples: &mut [f64], b: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = laplace_cdf(x, b);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// `check-noise`: Monte-Carlo check that one coordinate of the summed
/// shares of `raters` devices is `Laplace(2√K Δ / ε)`.
pub fn cmd_check_noise(p: NoiseCheckParams) -> Result<NoiseCheckReport> {
    if p.k == 0 || p.raters == 0 || p.samples < 2 || !(p.delta > 0.0) || !(p.epsilon > 0.0) {
        return Err(Error::usage(
            "check-noise needs K, raters >= 1, samples >= 2 and positive delta, epsilon",
        ));
    }
    let normal = Normal::new(0.0, (1.0 / p.raters as f64).sqrt()).expect("positive std");
    let mut s = rng::stream(p.seed, Purpose::NoiseCheck, &[p.raters as u64]);
    let mut draws: Vec<f64> = (0..p.samples)
        .map(|_| {
            let h: f64 = Exp1.sample(&mut s);
            (0..p.raters)
                .map(|_| noise_share(h, normal.sample(&mut s), p.k, p.delta, p.epsilon))
                .sum()
        })
        .collect();
    let b = laplace_scale(p.k, p.delta, p.epsilon);
    let (mean, sd) = eval::mean_std(&draws);
    let variance = sd * sd;
    let expected_variance = 2.0 * b * b;
    let ks = ks_distance_laplace(&mut draws, b);
    Ok(NoiseCheckReport {
        params: p,
        scale: b,
        mean,
        mean_tolerance: 3.0 * expected_variance.sqrt() / (p.samples as f64).sqrt(),
        variance,
        expected_variance,
        variance_rel_error: (variance / expected_variance - 1.0).abs(),
        ks,
    })
}
