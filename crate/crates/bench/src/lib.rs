//! Benchmark fixtures.

use mtnet_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform `[-1, 1)` tensor from a fixed seed.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// Uniform `[0, 1)` tensor, for volumes that must stay non-negative.
pub fn random_volume(shape: &[usize], seed: u64) -> Tensor<f32> {
    random_tensor(shape, seed).map(|x| 0.5 * (x + 1.0))
}
