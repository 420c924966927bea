//! Heterogeneous differentially private matrix factorization.
//!
//! Users keep their ratings and latent vectors on their own devices; an
//! untrusted recommender aggregates noisy item gradients. Every rating may
//! carry its own privacy budget: ratings are shrunk by a per-rating weight
//! before training and predictions are scaled back up afterwards.
//!
//! Module map:
//! - [`model`]: ratings, factor model, gradients, learning-rate schedule
//! - [`privacy`]: weights, stretching, noise calibration, noise plans
//! - [`protocol`]: device/recommender simulation
//! - [`baselines`]: MF, DPMF, PDPMF and the HDPMF variants
//! - [`data`]: loaders and splits
//! - [`eval`]: metrics, experiments, significance tests, results files
//! - [`config`], [`cli`]: configuration and subcommands

pub mod baselines;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod privacy;
pub mod protocol;
pub mod rng;

pub use baselines::Method;
pub use config::{parse_config, ExperimentConfig};
pub use error::{Error, Result};
pub use model::{FactorModel, Rating, RatingDataset, RatingScale, TrainConfig};
pub use privacy::{NoisePlan, PrivacySpec, WeightAssignment};
