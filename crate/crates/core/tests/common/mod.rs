#![allow(dead_code)]

pub mod oracle;

use hdpmf::{Rating, RatingDataset, RatingScale};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scale() -> RatingScale {
    RatingScale::new(1.0, 5.0).unwrap()
}

/// Random integer ratings on an `n × m` grid, each cell present with
/// probability `density`. Every user and item keeps at least one rating.
pub fn synthetic(n: usize, m: usize, density: f64, seed: u64) -> RatingDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for u in 0..n {
        for j in 0..m {
            if rng.random::<f64>() < density || j == u % m || u == j % n {
                entries.push(Rating {
                    user: u,
                    item: j,
                    value: rng.random_range(1..=5) as f64,
                });
            }
        }
    }
    RatingDataset::new(n, m, entries, scale()).unwrap()
}
