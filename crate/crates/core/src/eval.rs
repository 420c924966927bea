//! Metrics, multi-seed experiments, paired t-tests and results files.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::baselines::{self, Method};
use crate::config::{ExperimentConfig, SplitChoice};
use crate::data::{self, SplitPlan};
use crate::error::{Error, Result};
use crate::model::{RatingDataset, TrainConfig};
use crate::privacy::{allocate_weights, WeightAssignment};
use crate::protocol::{predict_all, PredictOptions};

fn check_pair(predictions: &[f64], truths: &[f64]) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::usage("metrics need at least one prediction"));
    }
    if predictions.len() != truths.len() {
        return Err(Error::usage(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    Ok(())
}

/// Mean squared error.
pub fn mse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    check_pair(predictions, truths)?;
    let sum: f64 = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / predictions.len() as f64)
}

/// Mean absolute error.
pub fn mae(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    check_pair(predictions, truths)?;
    let sum: f64 = predictions.iter().zip(truths).map(|(p, t)| (p - t).abs()).sum();
    Ok(sum / predictions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Error message for a failed run.
    pub metrics: std::result::Result<Metrics, String>,
}

/// Mean and sample standard deviation over the successful seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub method: Method,
    pub dataset: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedOutcome>,
    pub summary: Option<Summary>,
}

impl ExperimentResult {
    /// Some seed failed, so the summary covers fewer runs than requested.
    pub fn is_partial(&self) -> bool {
        self.seeds.iter().any(|s| s.metrics.is_err())
    }

    pub fn mse_values(&self) -> Vec<f64> {
        self.seeds
            .iter()
            .filter_map(|s| s.metrics.as_ref().ok().map(|m| m.mse))
            .collect()
    }

    pub fn mae_values(&self) -> Vec<f64> {
        self.seeds
            .iter()
            .filter_map(|s| s.metrics.as_ref().ok().map(|m| m.mae))
            .collect()
    }
}

/// Mean and sample (n − 1) standard deviation; the deviation of a single
/// value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One seed's data: split, optional sparsification, privacy weights.
#[derive(Debug, Clone)]
pub struct SeedSetup {
    pub split: SplitPlan,
    pub weights: WeightAssignment,
}

pub fn prepare_seed(dataset: &RatingDataset, cfg: &ExperimentConfig, seed: u64) -> Result<SeedSetup> {
    let mut split = match cfg.split {
        SplitChoice::LeaveNOut => data::split_leave_n_out(dataset, cfg.n_test, seed),
        SplitChoice::LeaveOneOut => data::split_leave_one_out(dataset, seed),
    };
    if cfg.fraction < 1.0 {
        split.train = data::subsample_per_user(&split.train, cfg.fraction, seed)?;
    }
    let weights = allocate_weights(&cfg.privacy, dataset.n_users(), dataset.n_items(), seed)?;
    Ok(SeedSetup { split, weights })
}

pub fn train_config(cfg: &ExperimentConfig, method: Method, seed: u64) -> TrainConfig {
    let (learning_rate, lambda) = cfg.hyperparameters(method);
    TrainConfig {
        epochs: cfg.epochs,
        learning_rate,
        lambda,
        k: cfg.k,
        seed,
    }
}

/// Trains on `train` and scores on `test`.
pub fn evaluate(
    method: Method,
    train: &RatingDataset,
    test: &RatingDataset,
    weights: &WeightAssignment,
    epsilon: f64,
    tc: &TrainConfig,
    rescale: bool,
    clamp: bool,
) -> Result<Metrics> {
    let (model, opts) = baselines::train(method, train, weights, epsilon, tc)?;
    let opts = PredictOptions {
        rescale: opts.rescale && rescale,
        clamp,
    };
    let pairs: Vec<(usize, usize)> = test.entries().iter().map(|r| (r.user, r.item)).collect();
    let preds: Vec<f64> = predict_all(&model, weights, &pairs, test.scale(), opts)?
        .into_iter()
        .map(|(_, _, p)| p)
        .collect();
    let truths: Vec<f64> = test.entries().iter().map(|r| r.value).collect();
    Ok(Metrics {
        mse: mse(&preds, &truths)?,
        mae: mae(&preds, &truths)?,
    })
}

fn run_seed(dataset: &RatingDataset, cfg: &ExperimentConfig, method: Method, seed: u64) -> Result<Metrics> {
    let setup = prepare_seed(dataset, cfg, seed)?;
    evaluate(
        method,
        &setup.split.train,
        &setup.split.test,
        &setup.weights,
        cfg.privacy.epsilon,
        &train_config(cfg, method, seed),
        cfg.rescale,
        cfg.clamp,
    )
}

/// Runs `method` once per seed on an already loaded dataset. Seeds run in
/// parallel; each run is sequential and deterministic. A failed seed is
/// recorded and excluded from the summary.
pub fn run_experiment_on(
    dataset: &RatingDataset,
    cfg: &ExperimentConfig,
    method: Method,
    seeds: &[u64],
) -> Result<ExperimentResult> {
    if seeds.is_empty() {
        return Err(Error::usage("at least one seed required"));
    }
    let outcomes: Vec<SeedOutcome> = seeds
        .par_iter()
        .map(|&seed| SeedOutcome {
            seed,
            metrics: run_seed(dataset, cfg, method, seed).map_err(|e| format!("seed {seed}: {e}")),
        })
        .collect();
    let mut result = ExperimentResult {
        method,
        dataset: cfg.dataset_label(),
        config: cfg.clone(),
        seeds: outcomes,
        summary: None,
    };
    let mses = result.mse_values();
    if !mses.is_empty() {
        let (mse_mean, mse_std) = mean_std(&mses);
        let (mae_mean, mae_std) = mean_std(&result.mae_values());
        result.summary = Some(Summary {
            n: mses.len(),
            mse_mean,
            mse_std,
            mae_mean,
            mae_std,
        });
    }
    Ok(result)
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<RatingDataset> {
    let path = cfg.resolve_dataset()?;
    Ok(data::load(path, cfg.format, cfg.scale)?.dataset)
}

/// Loads the configured dataset and runs every configured method.
pub fn run_experiment(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<ExperimentResult>> {
    let dataset = load_dataset(cfg)?;
    cfg.methods
        .iter()
        .map(|&m| run_experiment_on(&dataset, cfg, m, seeds))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Significance {
    None,
    P90,
    P95,
    P99,
}

impl Significance {
    pub fn label(self) -> &'static str {
        match self {
            Significance::None => "none",
            Significance::P90 => "90%",
            Significance::P95 => "95%",
            Significance::P99 => "99%",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub level: Significance,
}

/// One-sided paired t-test of "`a` is smaller than `b`" on per-seed
/// metrics. The statistic uses the differences `b − a`, so swapping the
/// arguments negates it.
///
/// Constant non-zero differences have zero variance; a constant positive
/// difference counts as 99% and a constant negative one as no
/// significance. Identical samples give `t = 0`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::usage("paired t-test needs two equal-length samples of size >= 2"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let (mean, sd) = mean_std(&diffs);
    let n = diffs.len() as f64;
    if sd == 0.0 {
        return Ok(if mean > 0.0 {
            TTest {
                t: f64::INFINITY,
                level: Significance::P99,
            }
        } else if mean < 0.0 {
            TTest {
                t: f64::NEG_INFINITY,
                level: Significance::None,
            }
        } else {
            TTest {
                t: 0.0,
                level: Significance::None,
            }
        });
    }
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("n >= 2");
    let level = [
        (0.99, Significance::P99),
        (0.95, Significance::P95),
        (0.90, Significance::P90),
    ]
    .into_iter()
    .find(|&(q, _)| t > dist.inverse_cdf(q))
    .map_or(Significance::None, |(_, s)| s);
    Ok(TTest { t, level })
}

pub const SEED_HEADER: &str = "method,dataset,K,eps,f_uc,eps_uc,fraction,seed,mse,mae";
pub const AGGREGATE_HEADER: &str =
    "method,dataset,K,eps,f_uc,eps_uc,fraction,n,mse_mean,mse_std,mae_mean,mae_std,status";

fn key_columns(r: &ExperimentResult) -> String {
    let c = &r.config;
    format!(
        "{},{},{},{},{},{},{}",
        r.method,
        r.dataset,
        c.k,
        c.privacy.epsilon,
        c.privacy.users.conservative_ratio,
        c.privacy.users.conservative_floor,
        c.fraction
    )
}

/// Renders the results file: the effective config of the first result as
/// `#` comments, one row per seed, then one aggregate row per result.
/// Floats use the shortest representation that parses back exactly.
pub fn render_results(results: &[ExperimentResult]) -> Result<String> {
    let first = results
        .first()
        .ok_or_else(|| Error::usage("no results to emit"))?;
    let mut out = String::new();
    out.push_str("# effective config\n");
    for (k, v) in first.config.to_pairs() {
        let _ = writeln!(out, "# {k} = {v}");
    }
    out.push_str(SEED_HEADER);
    out.push('\n');
    for r in results {
        let keys = key_columns(r);
        for s in &r.seeds {
            match &s.metrics {
                Ok(m) => {
                    let _ = writeln!(out, "{keys},{},{},{}", s.seed, m.mse, m.mae);
                }
                Err(_) => {
                    let _ = writeln!(out, "{keys},{},failed,failed", s.seed);
                }
            }
        }
    }
    out.push_str("# aggregate\n");
    out.push_str(AGGREGATE_HEADER);
    out.push('\n');
    for r in results {
        let keys = key_columns(r);
        let status = if r.is_partial() { "partial" } else { "complete" };
        match r.summary {
            Some(s) => {
                let _ = writeln!(
                    out,
                    "{keys},{},{},{},{},{},{status}",
                    s.n, s.mse_mean, s.mse_std, s.mae_mean, s.mae_std
                );
            }
            None => {
                let _ = writeln!(out, "{keys},0,,,,,failed");
            }
        }
    }
    Ok(out)
}

pub fn emit_results(results: &[ExperimentResult], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = render_results(results)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Learning-rate grids searched by [`grid_search`].
pub fn learning_rate_grid(method: Method) -> &'static [f64] {
    match method {
        Method::Dpmf => &[0.005, 0.001, 0.0005, 0.0001],
        _ => &[0.05, 0.01, 0.005, 0.001],
    }
}

pub const LAMBDA_GRID: [f64; 2] = [0.01, 0.001];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub lambda: f64,
    /// Mean validation MSE over the folds; infinite when a fold diverged.
    pub mse: f64,
}

/// Mean validation MSE of `method` over `folds`-fold cross-validation of
/// `train`, using the given weights for every fold.
pub fn cross_validate(
    train: &RatingDataset,
    weights: &WeightAssignment,
    cfg: &ExperimentConfig,
    method: Method,
    tc: &TrainConfig,
    folds: usize,
) -> Result<f64> {
    let splits = data::kfold_splits(train, folds, tc.seed)?;
    let scores: Vec<f64> = splits
        .par_iter()
        .map(|f| {
            evaluate(method, &f.train, &f.test, weights, cfg.privacy.epsilon, tc, cfg.rescale, cfg.clamp)
                .map(|m| m.mse)
                .unwrap_or(f64::INFINITY)
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Cross-validated search over the learning-rate grid and [`LAMBDA_GRID`]
/// on the training half of the first configured seed.
pub fn grid_search(
    dataset: &RatingDataset,
    cfg: &ExperimentConfig,
    method: Method,
    folds: usize,
) -> Result<Vec<GridPoint>> {
    let seed = *cfg
        .seeds
        .first()
        .ok_or_else(|| Error::usage("at least one seed required"))?;
    let setup = prepare_seed(dataset, cfg, seed)?;
    let mut out = Vec::new();
    for &learning_rate in learning_rate_grid(method) {
        for &lambda in &LAMBDA_GRID {
            let tc = TrainConfig {
                epochs: cfg.epochs,
                learning_rate,
                lambda,
                k: cfg.k,
                seed,
            };
            let mse = cross_validate(&setup.split.train, &setup.weights, cfg, method, &tc, folds)?;
            out.push(GridPoint {
                learning_rate,
                lambda,
                mse,
            });
        }
    }
    Ok(out)
}
