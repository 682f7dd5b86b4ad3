//! Deterministic fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use salpn_core::retrieval::EmbeddingRecord;
use salpn_core::tensor::Tensor3;

/// Random feature map with a fixed seed.
pub fn random_tensor(channels: usize, side: usize, seed: u64) -> Tensor3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..channels * side * side).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor3::new(channels, side, side, data).expect("valid shape")
}

/// Random embedding gallery with a fixed seed.
pub fn random_gallery(items: usize, dim: usize, classes: usize, seed: u64) -> Vec<EmbeddingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..items)
        .map(|i| {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            EmbeddingRecord::new(format!("g{i}"), i % classes, v).expect("finite")
        })
        .collect()
}
