//! The compared training methods.
//!
//! | method  | trains on      | noise budget       | data           | prediction     |
//! |---------|----------------|--------------------|----------------|----------------|
//! | MF      | `R_ij`         | none               | all            | `u·v`          |
//! | DPMF    | `R_ij`         | `min_ij W_ij ε`    | all            | `u·v`          |
//! | PDPMF   | `R_ij`         | `ε`                | sampled subset | `u·v`          |
//! | HDPMF   | `W_ij R_ij`    | `ε`                | all            | `u·v / W_ij`   |
//! | HDPMF-R | `W_ij R_ij`    | `ε`                | all            | `u·v`          |
//!
//! All private methods use the decentralized protocol with noise sampled once
//! per run and split across raters.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{self, FactorModel, RatingDataset, TrainConfig};
use crate::privacy::{personalized_budget, WeightAssignment};
use crate::protocol::{self, NoiseSetting, PredictOptions, ProtocolOptions};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Mf,
    Dpmf,
    Pdpmf,
    Hdpmf,
    HdpmfR,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Mf,
        Method::Dpmf,
        Method::Pdpmf,
        Method::Hdpmf,
        Method::HdpmfR,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mf => "mf",
            Method::Dpmf => "dpmf",
            Method::Pdpmf => "pdpmf",
            Method::Hdpmf => "hdpmf",
            Method::HdpmfR => "hdpmf_r",
        }
    }

    /// Whether predictions are divided by `W_ij`.
    pub fn rescales(self) -> bool {
        self == Method::Hdpmf
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

/// Non-private centralized MF on the raw ratings.
pub fn run_mf(dataset: &RatingDataset, cfg: &TrainConfig) -> Result<FactorModel> {
    let weights = WeightAssignment::uniform(dataset.n_users(), dataset.n_items());
    model::train_centralized(dataset, &weights, None, cfg)
}

fn run_uniform_budget(
    dataset: &RatingDataset,
    budget: f64,
    cfg: &TrainConfig,
) -> Result<FactorModel> {
    let weights = WeightAssignment::uniform(dataset.n_users(), dataset.n_items());
    let out = protocol::run_protocol(
        dataset,
        &weights,
        cfg,
        ProtocolOptions {
            stretch: false,
            noise: NoiseSetting::Laplace { epsilon: budget },
            ..Default::default()
        },
    )?;
    Ok(out.model)
}

/// Uniform budget that honours the strictest rating: `min_ij W_ij ε`.
pub fn dpmf_budget(dataset: &RatingDataset, weights: &WeightAssignment, epsilon: f64) -> Result<f64> {
    weights
        .min_observed_weight(dataset)
        .map(|w| personalized_budget(w, epsilon))
        .ok_or_else(|| Error::usage("cannot train on an empty dataset"))
}

/// Same noise for every rating, calibrated to the smallest personal budget.
pub fn run_dpmf(
    dataset: &RatingDataset,
    weights: &WeightAssignment,
    epsilon: f64,
    cfg: &TrainConfig,
) -> Result<FactorModel> {
    let budget = dpmf_budget(dataset, weights, epsilon)?;
    run_uniform_budget(dataset, budget, cfg)
}

/// Keep probability of the sample mechanism: `(e^ε_ij − 1)/(e^t − 1)` below
/// the threshold, 1 at or above it.
pub fn keep_probability(budget: f64, threshold: f64) -> f64 {
    if budget >= threshold {
        1.0
    } else {
        budget.exp_m1() / threshold.exp_m1()
    }
}

/// Independently keeps each rating with its [`keep_probability`].
/// `budget(i, j)` gives `ε_ij`.
pub fn pdp_sample_ratings(
    dataset: &RatingDataset,
    budget: impl Fn(usize, usize) -> f64,
    threshold: f64,
    seed: u64,
) -> Result<RatingDataset> {
    if !(threshold > 0.0) {
        return Err(Error::usage("sampling threshold must be positive"));
    }
    let kept = dataset
        .entries()
        .iter()
        .filter(|r| {
            let p = keep_probability(budget(r.user, r.item), threshold);
            let mut s = rng::stream(seed, Purpose::PdpSample, &[r.user as u64, r.item as u64]);
            p >= 1.0 || s.random::<f64>() < p
        })
        .copied()
        .collect();
    Ok(RatingDataset::from_subset(dataset, kept))
}

/// Sample mechanism with threshold `ε`, then uniform-budget training on the
/// sampled ratings.
pub fn run_pdpmf(
    dataset: &RatingDataset,
    weights: &WeightAssignment,
    epsilon: f64,
    cfg: &TrainConfig,
) -> Result<FactorModel> {
    let sampled = pdp_sample_ratings(
        dataset,
        |i, j| personalized_budget(weights.weight(i, j), epsilon),
        epsilon,
        cfg.seed,
    )?;
    run_uniform_budget(&sampled, epsilon, cfg)
}

/// Trains `method` and returns the model with the prediction options it
/// must be evaluated with.
pub fn train(
    method: Method,
    dataset: &RatingDataset,
    weights: &WeightAssignment,
    epsilon: f64,
    cfg: &TrainConfig,
) -> Result<(FactorModel, PredictOptions)> {
    let model = match method {
        Method::Mf => run_mf(dataset, cfg)?,
        Method::Dpmf => run_dpmf(dataset, weights, epsilon, cfg)?,
        Method::Pdpmf => run_pdpmf(dataset, weights, epsilon, cfg)?,
        Method::Hdpmf | Method::HdpmfR => protocol::run_hdpmf(dataset, weights, epsilon, cfg)?.0,
    };
    Ok((
        model,
        PredictOptions {
            rescale: method.rescales(),
            clamp: true,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Rating, RatingScale};

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("svd".parse::<Method>().is_err());
    }

    #[test]
    fn keep_probability_examples() {
        assert_eq!(keep_probability(1.0, 1.0), 1.0);
        assert_eq!(keep_probability(2.0, 1.0), 1.0);
        let p = keep_probability(0.5, 1.0);
        assert!((p - 0.3775).abs() < 1e-4, "{p}");
        assert!((p - (0.5f64.exp() - 1.0) / (1f64.exp() - 1.0)).abs() < 1e-15);
    }

    fn grid(n: usize, m: usize) -> RatingDataset {
        let mut entries = Vec::new();
        for u in 0..n {
            for j in 0..m {
                entries.push(Rating {
                    user: u,
                    item: j,
                    value: 1.0 + ((u * 7 + j * 3) % 5) as f64,
                });
            }
        }
        RatingDataset::new(n, m, entries, RatingScale::new(1.0, 5.0).unwrap()).unwrap()
    }

    #[test]
    fn sampling_at_threshold_keeps_everything() {
        let d = grid(6, 6);
        let s = pdp_sample_ratings(&d, |_, _| 1.0, 1.0, 3).unwrap();
        assert_eq!(s, d);
    }

    #[test]
    fn sampling_is_a_subset_and_deterministic() {
        let d = grid(10, 10);
        let s = pdp_sample_ratings(&d, |i, _| 0.1 * (i + 1) as f64, 1.0, 3).unwrap();
        assert!(s.len() < d.len());
        assert!(s.entries().iter().all(|r| d.entries().contains(r)));
        assert_eq!(s, pdp_sample_ratings(&d, |i, _| 0.1 * (i + 1) as f64, 1.0, 3).unwrap());
    }

    #[test]
    fn dpmf_budget_uses_min_weight() {
        let d = grid(2, 2);
        let w = WeightAssignment::new(vec![0.5, 1.0], vec![0.4, 1.0]).unwrap();
        assert!((dpmf_budget(&d, &w, 2.0).unwrap() - 0.4).abs() < 1e-15);
        let unit = WeightAssignment::uniform(2, 2);
        assert_eq!(dpmf_budget(&d, &unit, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn pdpmf_without_sampling_equals_dpmf() {
        let d = grid(5, 4);
        let unit = WeightAssignment::uniform(5, 4);
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 0.01,
            lambda: 0.01,
            k: 2,
            seed: 9,
        };
        assert_eq!(
            run_pdpmf(&d, &unit, 1.0, &cfg).unwrap(),
            run_dpmf(&d, &unit, 1.0, &cfg).unwrap()
        );
    }
}
