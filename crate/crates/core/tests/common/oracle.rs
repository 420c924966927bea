//! Finite-difference oracle for the gradients of the perturbed objective.

use hdpmf::model::{self, FactorModel};
use hdpmf::privacy::{self, build_noise_plan, WeightAssignment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;

pub struct Instance {
    pub dataset: hdpmf::RatingDataset,
    pub weights: WeightAssignment,
    pub noise: hdpmf::NoisePlan,
    pub model: FactorModel,
}

pub fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=5);
    let m = rng.random_range(1..=5);
    let k = [1, 2, 5][rng.random_range(0..3)];
    let dataset = super::synthetic(n, m, 0.6, seed);
    let weights = WeightAssignment::new(
        (0..n).map(|_| rng.random_range(0.1..=1.0)).collect(),
        (0..m).map(|_| rng.random_range(0.1..=1.0)).collect(),
    )
    .unwrap();
    let noise = build_noise_plan(&dataset, k, 4.0, 1.0, seed).unwrap();
    let lambda = [0.0, 0.01, 0.5][rng.random_range(0..3)];
    let users = (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let items = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let model = FactorModel::from_parts(k, lambda, users, items).unwrap();
    Instance {
        dataset,
        weights,
        noise,
        model,
    }
}

fn objective(inst: &Instance, m: &FactorModel) -> f64 {
    model::private_objective(m, &inst.dataset, &inst.weights, &inst.noise).unwrap()
}

fn finite_difference(inst: &Instance, user: Option<usize>, item: Option<usize>) -> Vec<f64> {
    let k = inst.model.k();
    (0..k)
        .map(|c| {
            let mut plus = inst.model.clone();
            let mut minus = inst.model.clone();
            match (user, item) {
                (Some(i), _) => {
                    plus.user_mut(i)[c] += STEP;
                    minus.user_mut(i)[c] -= STEP;
                }
                (_, Some(j)) => {
                    plus.item_mut(j)[c] += STEP;
                    minus.item_mut(j)[c] -= STEP;
                }
                _ => unreachable!(),
            }
            (objective(inst, &plus) - objective(inst, &minus)) / (2.0 * STEP)
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let size = model::norm(a).max(model::norm(b)).max(1.0);
    diff / size
}

pub fn stretched_for_item(inst: &Instance, j: usize) -> Vec<(usize, f64)> {
    inst.dataset.raters_by_item()[j]
        .iter()
        .map(|&(i, r)| (i, privacy::stretch(r, inst.weights.weight(i, j))))
        .collect()
}

pub fn stretched_for_user(inst: &Instance, i: usize) -> Vec<(usize, f64)> {
    inst.dataset.items_by_user()[i]
        .iter()
        .map(|&(j, r)| (j, privacy::stretch(r, inst.weights.weight(i, j))))
        .collect()
}

/// Checks every item and user gradient of instances `0..count`; returns the
/// worst relative error.
pub fn worst_gradient_error(count: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..count {
        let inst = instance(seed);
        for j in 0..inst.dataset.n_items() {
            let analytic = model::item_gradient(
                &inst.model,
                j,
                &stretched_for_item(&inst, j),
                &inst.noise.aggregate(j),
            )
            .unwrap();
            worst = worst.max(rel_err(&analytic, &finite_difference(&inst, None, Some(j))));
        }
        for i in 0..inst.dataset.n_users() {
            let analytic =
                model::user_gradient(&inst.model, i, &stretched_for_user(&inst, i)).unwrap();
            worst = worst.max(rel_err(&analytic, &finite_difference(&inst, Some(i), None)));
        }
    }
    worst
}
