#![allow(dead_code)]

use lcm_ident::LatentClassModel;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random model with weights bounded away from zero and probabilities in (0.01, 1).
pub fn random_model(rng: &mut ChaCha8Rng, k: usize, j: usize) -> LatentClassModel {
    loop {
        let raw: Vec<f64> = (0..j).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let rows = (0..j)
            .map(|_| (0..k).map(|_| rng.random_range(0.01..1.0)).collect())
            .collect();
        if let Ok(m) = LatentClassModel::new(raw.iter().map(|w| w / total).collect(), rows) {
            return m;
        }
    }
}

/// Identifiable two-class, five-source model used by the estimation checks.
pub fn five_source_model() -> LatentClassModel {
    LatentClassModel::new(
        vec![0.4, 0.6],
        vec![
            vec![0.2, 0.3, 0.25, 0.15, 0.35],
            vec![0.6, 0.7, 0.5, 0.65, 0.55],
        ],
    )
    .unwrap()
}

pub fn reference_q() -> LatentClassModel {
    LatentClassModel::new(vec![0.5, 0.5], vec![vec![0.2475, 0.2475], vec![0.7425, 0.7425]]).unwrap()
}

/// Exact weights 6/7 and 1/7, not the 7-digit rounded values.
pub fn reference_r() -> LatentClassModel {
    LatentClassModel::new(vec![6.0 / 7.0, 1.0 / 7.0], vec![vec![0.495, 0.495], vec![0.99, 0.99]]).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
