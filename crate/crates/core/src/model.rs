//! Latent-factor model, private objective and its gradients.
//!
//! Ratings are predicted as the inner product `u_i · v_j` of a user vector
//! and an item vector. Training minimises
//!
//! ```text
//! Σ_(i,j) observed [ (W_ij R_ij − u_i·v_j)² + v_j·x_j^i ] + λ (‖U‖²_F + ‖V‖²_F)
//! ```
//!
//! by full-batch gradient descent: in every epoch each rated item takes one
//! step on its aggregated gradient, then every user takes one step against
//! the updated item factors and is projected back onto the unit ball.

use rand::Rng;

use crate::error::{Error, Result};
use crate::privacy::{NoisePlan, WeightAssignment};
use crate::rng::{self, Purpose};

/// Closed rating interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
}

impl RatingScale {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && max > min) {
            return Err(Error::Invariant(format!(
                "rating scale [{min}, {max}] must be finite with max > min"
            )));
        }
        Ok(Self { min, max })
    }

    /// `Δ = max − min`, the per-rating sensitivity.
    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.min && r <= self.max
    }

    pub fn clamp(&self, r: f64) -> f64 {
        r.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub value: f64,
}

/// Sparse user-item ratings on a declared scale.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingDataset {
    n_users: usize,
    n_items: usize,
    entries: Vec<Rating>,
    scale: RatingScale,
}

impl RatingDataset {
    /// Validates ranges, indices and uniqueness of `(user, item)` pairs.
    pub fn new(
        n_users: usize,
        n_items: usize,
        entries: Vec<Rating>,
        scale: RatingScale,
    ) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(entries.len());
        for r in &entries {
            if r.user >= n_users || r.item >= n_items {
                return Err(Error::Invariant(format!(
                    "rating ({}, {}) outside {n_users}x{n_items}",
                    r.user, r.item
                )));
            }
            if !scale.contains(r.value) {
                return Err(Error::Invariant(format!(
                    "rating {} for ({}, {}) outside [{}, {}]",
                    r.value, r.user, r.item, scale.min, scale.max
                )));
            }
            if !seen.insert((r.user, r.item)) {
                return Err(Error::Invariant(format!(
                    "duplicate rating for ({}, {})",
                    r.user, r.item
                )));
            }
        }
        Ok(Self {
            n_users,
            n_items,
            entries,
            scale,
        })
    }

    /// Builds a dataset from entries already known to be valid for the
    /// given shape (subsets of another dataset).
    pub(crate) fn from_subset(parent: &RatingDataset, entries: Vec<Rating>) -> Self {
        Self {
            n_users: parent.n_users,
            n_items: parent.n_items,
            entries,
            scale: parent.scale,
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Rating] {
        &self.entries
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    /// Entry indices grouped by user, in entry order.
    pub fn indices_by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_users];
        for (ix, r) in self.entries.iter().enumerate() {
            out[r.user].push(ix);
        }
        out
    }

    /// For every item, its raters in ascending user order with the rating.
    pub fn raters_by_item(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out = vec![Vec::new(); self.n_items];
        for r in &self.entries {
            out[r.item].push((r.user, r.value));
        }
        for raters in &mut out {
            raters.sort_by_key(|&(u, _)| u);
        }
        out
    }

    /// For every user, its rated items in ascending item order.
    pub fn items_by_user(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out = vec![Vec::new(); self.n_users];
        for r in &self.entries {
            out[r.user].push((r.item, r.value));
        }
        for items in &mut out {
            items.sort_by_key(|&(j, _)| j);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub k: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::usage("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::usage("learning rate must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::usage("lambda must be non-negative"));
        }
        if self.k == 0 {
            return Err(Error::usage("latent dimension must be at least 1"));
        }
        Ok(())
    }
}

/// User factors `U` and item factors `V`, stored row-major: row `i` of
/// `users` is `u_i`, row `j` of `items` is `v_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    k: usize,
    lambda: f64,
    users: Vec<f64>,
    items: Vec<f64>,
}

impl FactorModel {
    /// Entries i.i.d. uniform on `[0, 1/√K]`, so every `‖u_i‖₂ ≤ 1`.
    pub fn init(n_users: usize, n_items: usize, k: usize, lambda: f64, seed: u64) -> Self {
        assert!(n_users >= 1 && n_items >= 1 && k >= 1, "empty model shape");
        let hi = 1.0 / (k as f64).sqrt();
        let fill = |purpose, len| {
            let mut s = rng::stream(seed, purpose, &[]);
            (0..len).map(|_| s.random_range(0.0..=hi)).collect::<Vec<f64>>()
        };
        Self {
            k,
            lambda,
            users: fill(Purpose::InitUsers, n_users * k),
            items: fill(Purpose::InitItems, n_items * k),
        }
    }

    pub fn from_parts(k: usize, lambda: f64, users: Vec<f64>, items: Vec<f64>) -> Result<Self> {
        if k == 0 || users.len() % k != 0 || items.len() % k != 0 {
            return Err(Error::usage("factor buffers are not a multiple of K"));
        }
        Ok(Self {
            k,
            lambda,
            users,
            items,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n_users(&self) -> usize {
        self.users.len() / self.k
    }

    pub fn n_items(&self) -> usize {
        self.items.len() / self.k
    }

    pub fn user(&self, i: usize) -> &[f64] {
        &self.users[i * self.k..(i + 1) * self.k]
    }

    pub fn item(&self, j: usize) -> &[f64] {
        &self.items[j * self.k..(j + 1) * self.k]
    }

    pub fn user_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.users[i * self.k..(i + 1) * self.k]
    }

    pub fn item_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.items[j * self.k..(j + 1) * self.k]
    }

    pub fn user_factors(&self) -> &[f64] {
        &self.users
    }

    pub fn item_factors(&self) -> &[f64] {
        &self.items
    }

    pub fn max_user_norm(&self) -> f64 {
        self.users
            .chunks_exact(self.k)
            .map(norm)
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.users.iter().chain(&self.items).all(|x| x.is_finite())
    }

    fn check_user(&self, i: usize) -> Result<()> {
        if i >= self.n_users() {
            return Err(Error::usage(format!(
                "user {i} out of range ({} users)",
                self.n_users()
            )));
        }
        Ok(())
    }

    fn check_item(&self, j: usize) -> Result<()> {
        if j >= self.n_items() {
            return Err(Error::usage(format!(
                "item {j} out of range ({} items)",
                self.n_items()
            )));
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Raw inner-product prediction `u_i · v_j`.
pub fn predict_raw(model: &FactorModel, i: usize, j: usize) -> Result<f64> {
    model.check_user(i)?;
    model.check_item(j)?;
    Ok(dot(model.user(i), model.item(j)))
}

/// One term of the residual sum: `2 (a·b − target) b`, written into `out`.
///
/// Shared by the centralized gradients and by the device-side payloads so
/// both paths perform identical floating-point operations.
#[inline]
pub fn residual_term(anchor: &[f64], partner: &[f64], target: f64, out: &mut [f64]) {
    let residual = dot(anchor, partner) - target;
    for (o, p) in out.iter_mut().zip(partner) {
        *o = 2.0 * residual * p;
    }
}

/// `∂/∂v_j = 2 Σ_i (u_i·v_j − W_ij R_ij) u_i + x_j + 2λ v_j`.
///
/// `stretched` lists `(user, W_ij · R_ij)` for the raters of `j`; `noise` is
/// the aggregated perturbation `x_j`.
pub fn item_gradient(
    model: &FactorModel,
    j: usize,
    stretched: &[(usize, f64)],
    noise: &[f64],
) -> Result<Vec<f64>> {
    model.check_item(j)?;
    if noise.len() != model.k {
        return Err(Error::usage(format!(
            "noise vector has length {}, expected {}",
            noise.len(),
            model.k
        )));
    }
    let v = model.item(j);
    let mut acc = vec![0.0; model.k];
    let mut term = vec![0.0; model.k];
    for &(i, target) in stretched {
        model.check_user(i)?;
        residual_term(v, model.user(i), target, &mut term);
        for (a, t) in acc.iter_mut().zip(&term) {
            *a += t;
        }
    }
    for ((a, x), vk) in acc.iter_mut().zip(noise).zip(v) {
        *a += x;
        *a += 2.0 * model.lambda * vk;
    }
    Ok(acc)
}

/// `∂/∂u_i = 2 Σ_j (u_i·v_j − W_ij R_ij) v_j + 2λ u_i`.
pub fn user_gradient(
    model: &FactorModel,
    i: usize,
    stretched: &[(usize, f64)],
) -> Result<Vec<f64>> {
    model.check_user(i)?;
    for &(j, _) in stretched {
        model.check_item(j)?;
    }
    Ok(local_user_gradient(
        model.user(i),
        stretched.iter().map(|&(j, t)| (model.item(j), t)),
        model.lambda,
    ))
}

/// User gradient from the user's own vector and `(v_j, target)` pairs.
pub fn local_user_gradient<'a>(
    u: &[f64],
    rated: impl IntoIterator<Item = (&'a [f64], f64)>,
    lambda: f64,
) -> Vec<f64> {
    let mut acc = vec![0.0; u.len()];
    let mut term = vec![0.0; u.len()];
    for (v, target) in rated {
        residual_term(u, v, target, &mut term);
        for (a, t) in acc.iter_mut().zip(&term) {
            *a += t;
        }
    }
    for (a, uk) in acc.iter_mut().zip(u) {
        *a += 2.0 * lambda * uk;
    }
    acc
}

/// Step-decay schedule: `η₀` for the first quarter of the epochs, `η₀/5`
/// until three quarters, `η₀/25` afterwards.
pub fn learning_rate(epoch: usize, epochs: usize, initial: f64) -> f64 {
    let first = (epochs as f64 * 0.25).ceil() as usize;
    let second = (epochs as f64 * 0.75).ceil() as usize;
    if epoch < first {
        initial
    } else if epoch < second {
        initial / 5.0
    } else {
        initial / 25.0
    }
}

/// Euclidean projection onto the closed unit ball.
pub fn project_unit_ball(u: &[f64]) -> Vec<f64> {
    let mut out = u.to_vec();
    project_unit_ball_in_place(&mut out);
    out
}

pub fn project_unit_ball_in_place(u: &mut [f64]) {
    let n = norm(u);
    if n > 1.0 {
        for x in u.iter_mut() {
            *x /= n;
        }
        // rounding can leave the norm one ulp above 1; shrink until it is not,
        // so that projecting twice is the identity
        while norm(u) > 1.0 {
            for x in u.iter_mut() {
                *x *= 1.0 - f64::EPSILON;
            }
        }
    }
}

/// `x ← x − η g`.
pub fn descend(x: &mut [f64], grad: &[f64], eta: f64) {
    for (xk, g) in x.iter_mut().zip(grad) {
        *xk -= eta * g;
    }
}

/// Exact value of the perturbed objective. Used by gradient checks and
/// convergence logging, not by training.
pub fn private_objective(
    model: &FactorModel,
    dataset: &RatingDataset,
    weights: &WeightAssignment,
    noise: &NoisePlan,
) -> Result<f64> {
    let mut loss = 0.0;
    for r in dataset.entries() {
        let target = weights.weight(r.user, r.item) * r.value;
        let residual = target - predict_raw(model, r.user, r.item)?;
        let share = noise.share(r.item, r.user).ok_or_else(|| {
            Error::usage(format!("noise plan has no share for ({}, {})", r.user, r.item))
        })?;
        loss += residual * residual + dot(model.item(r.item), share);
    }
    let frob: f64 = model
        .user_factors()
        .iter()
        .chain(model.item_factors())
        .map(|x| x * x)
        .sum();
    Ok(loss + model.lambda * frob)
}

/// Centralized full-batch trainer on weighted targets with a fixed
/// aggregated item noise (`None` means zero noise).
///
/// This is the plain-MF path; the decentralized protocol in
/// [`crate::protocol`] performs the same arithmetic through messages.
pub fn train_centralized(
    dataset: &RatingDataset,
    weights: &WeightAssignment,
    item_noise: Option<&[Vec<f64>]>,
    cfg: &TrainConfig,
) -> Result<FactorModel> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::usage("cannot train on an empty dataset"));
    }
    let k = cfg.k;
    let mut model = FactorModel::init(
        dataset.n_users(),
        dataset.n_items(),
        k,
        cfg.lambda,
        cfg.seed,
    );
    let stretched_by_item: Vec<Vec<(usize, f64)>> = dataset
        .raters_by_item()
        .into_iter()
        .enumerate()
        .map(|(j, raters)| {
            raters
                .into_iter()
                .map(|(i, r)| (i, weights.weight(i, j) * r))
                .collect()
        })
        .collect();
    let stretched_by_user: Vec<Vec<(usize, f64)>> = dataset
        .items_by_user()
        .into_iter()
        .enumerate()
        .map(|(i, items)| {
            items
                .into_iter()
                .map(|(j, r)| (j, weights.weight(i, j) * r))
                .collect()
        })
        .collect();
    let zero = vec![0.0; k];

    for epoch in 0..cfg.epochs {
        let eta = learning_rate(epoch, cfg.epochs, cfg.learning_rate);
        for (j, stretched) in stretched_by_item.iter().enumerate() {
            if stretched.is_empty() {
                continue;
            }
            let x = item_noise.map_or(zero.as_slice(), |n| n[j].as_slice());
            let grad = item_gradient(&model, j, stretched, x)?;
            descend(model.item_mut(j), &grad, eta);
        }
        for (i, stretched) in stretched_by_user.iter().enumerate() {
            let grad = user_gradient(&model, i, stretched)?;
            let u = model.user_mut(i);
            descend(u, &grad, eta);
            project_unit_ball_in_place(u);
        }
        if !model.is_finite() {
            return Err(Error::Diverged {
                epoch,
                what: "non-finite latent factor".into(),
            });
        }
    }
    Ok(model)
}
