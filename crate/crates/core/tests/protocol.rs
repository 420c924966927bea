//! End-to-end properties of the simulated decentralized protocol.

mod common;

use hdpmf::baselines;
use hdpmf::model::{self, TrainConfig};
use hdpmf::privacy::WeightAssignment;
use hdpmf::protocol::{run_protocol, Envelope, NoiseSetting, ProtocolOptions};

fn cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 30,
        learning_rate: 0.01,
        lambda: 0.01,
        k: 4,
        seed,
    }
}

#[test]
fn unit_weights_and_zero_noise_reproduce_centralized_mf_bitwise() {
    let d = common::synthetic(50, 50, 0.2, 7);
    let unit = WeightAssignment::uniform(50, 50);
    let mf = baselines::run_mf(&d, &cfg(3)).unwrap();
    let out = run_protocol(
        &d,
        &unit,
        &cfg(3),
        ProtocolOptions {
            stretch: true,
            noise: NoiseSetting::Zero,
            ..Default::default()
        },
    )
    .unwrap();
    let bits = |xs: &[f64]| xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(out.model.item_factors()), bits(mf.item_factors()));
    assert_eq!(bits(out.model.user_factors()), bits(mf.user_factors()));
}

#[test]
fn protocol_matches_centralized_training_with_aggregated_noise() {
    let d = common::synthetic(15, 12, 0.4, 11);
    let weights = WeightAssignment::new(
        (0..15).map(|i| 0.2 + 0.05 * i as f64).collect(),
        (0..12).map(|j| 1.0 - 0.06 * j as f64).collect(),
    )
    .unwrap();
    let c = TrainConfig {
        learning_rate: 0.001,
        ..cfg(5)
    };
    let out = run_protocol(
        &d,
        &weights,
        &c,
        ProtocolOptions {
            stretch: true,
            noise: NoiseSetting::Laplace { epsilon: 1.0 },
            ..Default::default()
        },
    )
    .unwrap();
    let central =
        model::train_centralized(&d, &weights, Some(&out.noise.aggregates()), &c).unwrap();
    let gap = out
        .model
        .item_factors()
        .iter()
        .zip(central.item_factors())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(gap < 1e-8, "max |ΔV| = {gap}");
}

#[test]
fn same_seed_same_model_different_seed_different_model() {
    let d = common::synthetic(20, 20, 0.3, 1);
    let w = WeightAssignment::uniform(20, 20);
    let a = baselines::train(baselines::Method::Hdpmf, &d, &w, 1.0, &cfg(9)).unwrap();
    let b = baselines::train(baselines::Method::Hdpmf, &d, &w, 1.0, &cfg(9)).unwrap();
    let c = baselines::train(baselines::Method::Hdpmf, &d, &w, 1.0, &cfg(10)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
}

#[test]
fn user_vectors_stay_in_the_unit_ball() {
    let d = common::synthetic(20, 20, 0.5, 2);
    let w = WeightAssignment::uniform(20, 20);
    let big = TrainConfig {
        learning_rate: 0.05,
        epochs: 10,
        ..cfg(1)
    };
    for epochs in 1..=big.epochs {
        let c = TrainConfig { epochs, ..big };
        let out = run_protocol(
            &d,
            &w,
            &c,
            ProtocolOptions {
                noise: NoiseSetting::Laplace { epsilon: 1.0 },
                ..Default::default()
            },
        );
        if let Ok(out) = out {
            assert!(out.model.max_user_norm() <= 1.0 + 1e-12);
        }
    }
}

/// Every upstream envelope is either a membership list or a K-vector
/// gradient, and no upstream number equals a rating, a weight, a stretched
/// rating or a coordinate of any user vector.
#[test]
fn only_k_vectors_cross_the_boundary() {
    let d = common::synthetic(20, 20, 0.3, 4);
    let weights = WeightAssignment::new(
        (0..20).map(|i| 0.1 + 0.045 * i as f64).collect(),
        (0..20).map(|j| 0.3 + 0.035 * j as f64).collect(),
    )
    .unwrap();
    let c = cfg(8);
    let out = run_protocol(
        &d,
        &weights,
        &c,
        ProtocolOptions {
            stretch: true,
            noise: NoiseSetting::Laplace { epsilon: 1.0 },
            instrument: true,
            trace: None,
        },
    )
    .unwrap();
    let log = out.channel.log().unwrap();

    let mut secrets: Vec<f64> = Vec::new();
    for r in d.entries() {
        let w = weights.weight(r.user, r.item);
        secrets.extend([r.value, w, w * r.value]);
    }
    secrets.extend(weights.beta());
    secrets.extend(weights.gamma());
    secrets.extend(out.model.user_factors());

    let mut gradients = 0;
    for env in log {
        match env {
            Envelope::Register { user, items } => {
                let mut rated: Vec<usize> = d.items_by_user()[*user].iter().map(|p| p.0).collect();
                rated.sort_unstable();
                assert_eq!(items, &rated);
            }
            Envelope::Gradient(msg) => {
                gradients += 1;
                assert_eq!(msg.payload.len(), c.k);
                for x in &msg.payload {
                    assert!(
                        !secrets.iter().any(|s| s.to_bits() == x.to_bits()),
                        "payload leaks {x}"
                    );
                }
            }
            Envelope::ExpVector { .. } | Envelope::ItemFactors { .. } => {
                assert!(!env.is_upstream())
            }
        }
    }
    assert_eq!(gradients, d.len() * c.epochs);
    assert_eq!(out.channel.upstream_count(), d.n_users() + gradients);
}
