//! Privacy weights, stretching, noise calibration and the distributed
//! Laplace noise plan.
//!
//! Each user `i` carries a weight `β_i` and each item `j` a weight `γ_j`,
//! both in `(0, 1]`. The rating `R_ij` then gets the personal budget
//! `W_ij · ε` with `W_ij = β_i γ_j`. Training on the stretched ratings
//! `W_ij R_ij` with item-gradient noise `Laplace(2√K Δ / ε)` gives every
//! rating its own budget; predictions divide by `W_ij` again.
//!
//! The per-item Laplace vector is never drawn by a single party. The
//! recommender draws `h_j ~ Exp(1)^K` and every rater `i` of `j` draws
//! `c_j^i ~ N(0, 1/|R_j|)^K` and adds the share
//! `x_j^i = (2Δ/ε) √(2K h_j) ⊙ c_j^i`. Given `h`, the shares sum to a
//! Gaussian with variance `2 h b²`, and an exponential mixture of such
//! Gaussians is `Laplace(b)` with `b = 2√K Δ / ε`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal};

use crate::error::{Error, Result};
use crate::model::RatingDataset;
use crate::rng::{self, Purpose, Stream};

/// Group ratios and weight ranges for one side (users or items).
///
/// Conservative members draw from `[conservative_floor, moderate_floor)`,
/// moderate members from `[moderate_floor, liberal)`, liberal members get
/// exactly `liberal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSpec {
    pub conservative_ratio: f64,
    pub moderate_ratio: f64,
    pub conservative_floor: f64,
    pub moderate_floor: f64,
    pub liberal: f64,
}

impl GroupSpec {
    pub const DEFAULT_USERS: GroupSpec = GroupSpec {
        conservative_ratio: 0.54,
        moderate_ratio: 0.37,
        conservative_floor: 0.1,
        moderate_floor: 0.5,
        liberal: 1.0,
    };

    pub const DEFAULT_ITEMS: GroupSpec = GroupSpec {
        conservative_ratio: 0.33,
        moderate_ratio: 0.33,
        conservative_floor: 0.1,
        moderate_floor: 0.5,
        liberal: 1.0,
    };

    /// Every member liberal.
    pub const ALL_LIBERAL: GroupSpec = GroupSpec {
        conservative_ratio: 0.0,
        moderate_ratio: 0.0,
        conservative_floor: 1.0,
        moderate_floor: 1.0,
        liberal: 1.0,
    };

    fn validate(&self, side: &str) -> Result<()> {
        let ratio_ok = |r: f64| (0.0..=1.0).contains(&r);
        if !ratio_ok(self.conservative_ratio)
            || !ratio_ok(self.moderate_ratio)
            || self.conservative_ratio + self.moderate_ratio > 1.0 + 1e-12
        {
            return Err(Error::Invariant(format!(
                "{side} group ratios must lie in [0, 1] and sum to at most 1"
            )));
        }
        if !(self.conservative_floor > 0.0
            && self.conservative_floor <= self.moderate_floor
            && self.moderate_floor <= self.liberal
            && self.liberal == 1.0)
        {
            return Err(Error::Invariant(format!(
                "{side} weights must satisfy 0 < conservative <= moderate <= liberal = 1"
            )));
        }
        Ok(())
    }

    /// Group sizes `(conservative, moderate, liberal)` for `count` members.
    pub fn group_sizes(&self, count: usize) -> (usize, usize, usize) {
        let con = ((self.conservative_ratio * count as f64) + 1e-9).floor() as usize;
        let con = con.min(count);
        let moder = ((self.moderate_ratio * count as f64) + 1e-9).floor() as usize;
        let moder = moder.min(count - con);
        (con, moder, count - con - moder)
    }

    fn allocate(&self, count: usize, stream: &mut Stream) -> Vec<f64> {
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(stream);
        let (con, moder, _) = self.group_sizes(count);
        let mut out = vec![self.liberal; count];
        for (pos, &member) in order.iter().enumerate() {
            out[member] = if pos < con {
                uniform_half_open(stream, self.conservative_floor, self.moderate_floor)
            } else if pos < con + moder {
                uniform_half_open(stream, self.moderate_floor, self.liberal)
            } else {
                self.liberal
            };
        }
        out
    }
}

fn uniform_half_open(stream: &mut Stream, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        stream.random_range(lo..hi)
    } else {
        lo
    }
}

/// Maximum budget `ε` plus the user and item group specifications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacySpec {
    pub epsilon: f64,
    pub users: GroupSpec,
    pub items: GroupSpec,
}

impl Default for PrivacySpec {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            users: GroupSpec::DEFAULT_USERS,
            items: GroupSpec::DEFAULT_ITEMS,
        }
    }
}

impl PrivacySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Invariant("epsilon must be positive".into()));
        }
        self.users.validate("user")?;
        self.items.validate("item")
    }
}

/// Per-user `β` and per-item `γ`; the weight matrix is `W = βᵀγ`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightAssignment {
    beta: Vec<f64>,
    gamma: Vec<f64>,
}

impl WeightAssignment {
    pub fn new(beta: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        let ok = |w: &f64| *w > 0.0 && *w <= 1.0;
        if !beta.iter().all(ok) || !gamma.iter().all(ok) {
            return Err(Error::Invariant("privacy weights must lie in (0, 1]".into()));
        }
        Ok(Self { beta, gamma })
    }

    /// `W ≡ 1`.
    pub fn uniform(n_users: usize, n_items: usize) -> Self {
        Self {
            beta: vec![1.0; n_users],
            gamma: vec![1.0; n_items],
        }
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// `W_ij = β_i γ_j`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.beta[i] * self.gamma[j]
    }

    /// Smallest `W_ij` over the observed pairs of `dataset`.
    pub fn min_observed_weight(&self, dataset: &RatingDataset) -> Option<f64> {
        dataset
            .entries()
            .iter()
            .map(|r| self.weight(r.user, r.item))
            .reduce(f64::min)
    }
}

/// Seeded random group allocation for users and items.
pub fn allocate_weights(
    spec: &PrivacySpec,
    n_users: usize,
    n_items: usize,
    seed: u64,
) -> Result<WeightAssignment> {
    spec.validate()?;
    let beta = spec
        .users
        .allocate(n_users, &mut rng::stream(seed, Purpose::UserGroups, &[]));
    let gamma = spec
        .items
        .allocate(n_items, &mut rng::stream(seed, Purpose::ItemGroups, &[]));
    WeightAssignment::new(beta, gamma)
}

/// Personal budget `ε_ij = W_ij · ε`.
pub fn personalized_budget(weight: f64, epsilon: f64) -> f64 {
    weight * epsilon
}

/// Stretched rating `W_ij · R_ij`.
pub fn stretch(rating: f64, weight: f64) -> f64 {
    weight * rating
}

/// Per-coordinate Laplace scale `2 √K Δ / ε` of the item-gradient noise.
pub fn laplace_scale(k: usize, delta: f64, epsilon: f64) -> f64 {
    2.0 * (k as f64).sqrt() * delta / epsilon
}

/// One `Laplace(0, scale)` draw by inverse CDF.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, stream: &mut R) -> f64 {
    // u in [-1/2, 1/2); reject u = -1/2, where 1 - 2|u| = 0
    loop {
        let u: f64 = stream.random::<f64>() - 0.5;
        let tail = 1.0 - 2.0 * u.abs();
        if tail > 0.0 {
            return -scale * u.signum() * tail.ln();
        }
    }
}

/// One coordinate of a noise share: `(2Δ/ε) √(2K h) c`.
#[inline]
pub fn noise_share(h: f64, c: f64, k: usize, delta: f64, epsilon: f64) -> f64 {
    2.0 * delta * (2.0 * k as f64 * h).sqrt() * c / epsilon
}

/// The recommender-side exponential vector `h_j`.
pub fn draw_exp_vector(seed: u64, item: usize, k: usize) -> Vec<f64> {
    let mut s = rng::stream(seed, Purpose::NoiseExp, &[item as u64]);
    (0..k).map(|_| Exp1.sample(&mut s)).collect()
}

/// The device-side Gaussian vector `c_j^i ~ N(0, 1/raters)^K`.
pub fn draw_gaussian_vector(seed: u64, item: usize, user: usize, raters: usize, k: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, (1.0 / raters as f64).sqrt()).expect("positive std");
    let mut s = rng::stream(seed, Purpose::NoiseGauss, &[item as u64, user as u64]);
    (0..k).map(|_| normal.sample(&mut s)).collect()
}

/// Share vector `x_j^i` from `h_j` and `c_j^i`.
pub fn share_vector(h: &[f64], c: &[f64], delta: f64, epsilon: f64) -> Vec<f64> {
    let k = h.len();
    h.iter()
        .zip(c)
        .map(|(&hk, &ck)| noise_share(hk, ck, k, delta, epsilon))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemNoise {
    pub exp: Vec<f64>,
    /// `(user, c_j^i, x_j^i)` in ascending user order.
    pub shares: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

/// Objective-perturbation noise for one training run, sampled once.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePlan {
    k: usize,
    delta: f64,
    epsilon: f64,
    items: Vec<Option<ItemNoise>>,
}

impl NoisePlan {
    /// All shares identically zero; `h_j` and `c_j^i` are zero too.
    pub fn zeros(dataset: &RatingDataset, k: usize) -> Self {
        let items = dataset
            .raters_by_item()
            .into_iter()
            .map(|raters| {
                (!raters.is_empty()).then(|| ItemNoise {
                    exp: vec![0.0; k],
                    shares: raters
                        .into_iter()
                        .map(|(i, _)| (i, vec![0.0; k], vec![0.0; k]))
                        .collect(),
                })
            })
            .collect();
        Self {
            k,
            delta: dataset.scale().range(),
            epsilon: f64::INFINITY,
            items,
        }
    }

    pub(crate) fn from_items(
        k: usize,
        delta: f64,
        epsilon: f64,
        items: Vec<Option<ItemNoise>>,
    ) -> Self {
        Self {
            k,
            delta,
            epsilon,
            items,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn scale(&self) -> f64 {
        laplace_scale(self.k, self.delta, self.epsilon)
    }

    pub fn item(&self, j: usize) -> Option<&ItemNoise> {
        self.items.get(j).and_then(Option::as_ref)
    }

    /// `x_j^i`, if `i` rated `j`.
    pub fn share(&self, j: usize, i: usize) -> Option<&[f64]> {
        let item = self.item(j)?;
        item.shares
            .binary_search_by_key(&i, |(u, _, _)| *u)
            .ok()
            .map(|pos| item.shares[pos].2.as_slice())
    }

    /// `x_j = Σ_i x_j^i`, summed in ascending user order; zero for unrated items.
    pub fn aggregate(&self, j: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.k];
        if let Some(item) = self.item(j) {
            for (_, _, x) in &item.shares {
                for (a, v) in acc.iter_mut().zip(x) {
                    *a += v;
                }
            }
        }
        acc
    }

    pub fn aggregates(&self) -> Vec<Vec<f64>> {
        (0..self.items.len()).map(|j| self.aggregate(j)).collect()
    }
}

/// Samples `h_j` for every rated item and `c_j^i` for every rating, each
/// from its own keyed stream, and stores the shares.
pub fn build_noise_plan(
    dataset: &RatingDataset,
    k: usize,
    delta: f64,
    epsilon: f64,
    seed: u64,
) -> Result<NoisePlan> {
    if k == 0 || !(delta > 0.0) || !(epsilon > 0.0) {
        return Err(Error::usage("noise plan needs K >= 1, delta > 0, epsilon > 0"));
    }
    let items = dataset
        .raters_by_item()
        .into_iter()
        .enumerate()
        .map(|(j, raters)| {
            if raters.is_empty() {
                return None;
            }
            let exp = draw_exp_vector(seed, j, k);
            let n = raters.len();
            let shares = raters
                .into_iter()
                .map(|(i, _)| {
                    let c = draw_gaussian_vector(seed, j, i, n, k);
                    let x = share_vector(&exp, &c, delta, epsilon);
                    (i, c, x)
                })
                .collect();
            Some(ItemNoise { exp, shares })
        })
        .collect();
    Ok(NoisePlan {
        k,
        delta,
        epsilon,
        items,
    })
}

/// `clamp(raw / W_ij)` onto the rating scale, or just `raw / W_ij` when
/// `clamp` is off.
pub fn rescale_prediction(
    raw: f64,
    weight: f64,
    scale_min: f64,
    scale_max: f64,
    clamp: bool,
) -> Result<f64> {
    if !(weight > 0.0 && weight <= 1.0) {
        return Err(Error::Invariant(format!(
            "privacy weight {weight} outside (0, 1]"
        )));
    }
    let r = raw / weight;
    Ok(if clamp { r.clamp(scale_min, scale_max) } else { r })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Rating, RatingScale};

    #[test]
    fn default_user_groups_for_100() {
        assert_eq!(GroupSpec::DEFAULT_USERS.group_sizes(100), (54, 37, 9));
        assert_eq!(GroupSpec::DEFAULT_ITEMS.group_sizes(100), (33, 33, 34));
    }

    #[test]
    fn default_allocation_counts_and_ranges() {
        let w = allocate_weights(&PrivacySpec::default(), 100, 50, 9).unwrap();
        let con = w.beta().iter().filter(|&&b| b < 0.5).count();
        let moder = w.beta().iter().filter(|&&b| (0.5..1.0).contains(&b)).count();
        let lib = w.beta().iter().filter(|&&b| b == 1.0).count();
        assert_eq!((con, moder, lib), (54, 37, 9));
        assert!(w.beta().iter().all(|&b| (0.1..=1.0).contains(&b)));
        assert!(w.gamma().iter().all(|&g| (0.1..=1.0).contains(&g)));
        assert_eq!(w, allocate_weights(&PrivacySpec::default(), 100, 50, 9).unwrap());
        assert_ne!(w, allocate_weights(&PrivacySpec::default(), 100, 50, 10).unwrap());
    }

    #[test]
    fn all_liberal_spec_gives_unit_weights() {
        let spec = PrivacySpec {
            epsilon: 1.0,
            users: GroupSpec::ALL_LIBERAL,
            items: GroupSpec::ALL_LIBERAL,
        };
        let w = allocate_weights(&spec, 30, 20, 1).unwrap();
        assert!(w.beta().iter().chain(w.gamma()).all(|&x| x == 1.0));
    }

    #[test]
    fn spec_validation() {
        let mut spec = PrivacySpec::default();
        spec.users.conservative_ratio = 0.8;
        assert!(spec.validate().is_err());
        let mut spec = PrivacySpec::default();
        spec.items.conservative_floor = 0.0;
        assert!(spec.validate().is_err());
        let mut spec = PrivacySpec::default();
        spec.epsilon = -1.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn scalar_examples() {
        let w = WeightAssignment::new(vec![0.5, 1.0], vec![0.8, 1.0]).unwrap();
        assert!((w.weight(0, 0) - 0.4).abs() < 1e-15);
        assert_eq!(w.weight(1, 1), 1.0);
        assert!((personalized_budget(0.4, 1.0) - 0.4).abs() < 1e-15);
        assert_eq!(personalized_budget(1.0, 3.0), 3.0);
        assert_eq!(stretch(5.0, 0.2), 1.0);
        assert_eq!(stretch(3.5, 1.0), 3.5);
        assert!((laplace_scale(10, 4.0, 1.0) - 8.0 * 10f64.sqrt()).abs() < 1e-12);
        assert!((laplace_scale(10, 4.0, 1.0) - 25.298).abs() < 1e-3);
        assert_eq!(laplace_scale(1, 1.0, 2.0), 1.0);
        assert_eq!(laplace_scale(3, 2.0, 0.5), 2.0 * laplace_scale(3, 2.0, 1.0));
        assert!(WeightAssignment::new(vec![0.0], vec![1.0]).is_err());
    }

    #[test]
    fn rescale_examples() {
        assert!((rescale_prediction(0.6, 0.5, 1.0, 5.0, true).unwrap() - 1.2).abs() < 1e-12);
        assert_eq!(rescale_prediction(10.0, 0.5, 1.0, 5.0, true).unwrap(), 5.0);
        assert_eq!(rescale_prediction(-3.0, 1.0, 1.0, 5.0, true).unwrap(), 1.0);
        assert_eq!(rescale_prediction(10.0, 0.5, 1.0, 5.0, false).unwrap(), 20.0);
        assert!(matches!(
            rescale_prediction(1.0, 0.0, 1.0, 5.0, true),
            Err(Error::Invariant(_))
        ));
        assert!(rescale_prediction(1.0, -0.5, 1.0, 5.0, true).is_err());
    }

    fn small_dataset() -> RatingDataset {
        let scale = RatingScale::new(1.0, 5.0).unwrap();
        let entries = vec![
            Rating { user: 0, item: 0, value: 5.0 },
            Rating { user: 2, item: 0, value: 2.0 },
            Rating { user: 1, item: 2, value: 4.0 },
        ];
        RatingDataset::new(3, 3, entries, scale).unwrap()
    }

    #[test]
    fn noise_plan_structure() {
        let d = small_dataset();
        let plan = build_noise_plan(&d, 4, 4.0, 1.0, 17).unwrap();
        assert!(plan.item(1).is_none());
        assert_eq!(plan.aggregate(1), vec![0.0; 4]);
        assert!(plan.share(0, 0).is_some() && plan.share(0, 2).is_some());
        assert!(plan.share(0, 1).is_none());
        let item = plan.item(0).unwrap();
        for (_, c, x) in &item.shares {
            for k in 0..4 {
                let expected = 2.0 * 4.0 * (2.0 * 4.0 * item.exp[k]).sqrt() * c[k] / 1.0;
                assert!((x[k] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
            }
        }
        assert!(item.exp.iter().all(|&h| h >= 0.0));
        assert_eq!(plan, build_noise_plan(&d, 4, 4.0, 1.0, 17).unwrap());
    }

    #[test]
    fn laplace_draw_is_deterministic() {
        let mut a = rng::stream(1, Purpose::NoiseCheck, &[]);
        let mut b = rng::stream(1, Purpose::NoiseCheck, &[]);
        assert_eq!(sample_laplace(2.0, &mut a), sample_laplace(2.0, &mut b));
    }

    #[test]
    fn laplace_moments() {
        // Monte-Carlo oracle: mean 0 within 3 sd/sqrt(n), variance 2b² within 1%
        let b = 1.7;
        let n = 1_000_000;
        let mut s = rng::stream(2024, Purpose::NoiseCheck, &[1]);
        let draws: Vec<f64> = (0..n).map(|_| sample_laplace(b, &mut s)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 3.0 * b * 2f64.sqrt() / 1e3, "mean {mean}");
        assert!((var / (2.0 * b * b) - 1.0).abs() < 0.01, "var {var}");
    }
}
