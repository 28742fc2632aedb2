//! Fixtures shared by the benchmarks.

use esmhc_core::hsi::{boundaries_for_expansion, gen_synthetic_cube};
use esmhc_core::{EsMhc, ModelConfig, ModelInput, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// The desk-scale model: 32×32×40 synthetic scene, three streams, D = 32.
pub fn desk_model() -> (EsMhc, ModelInput) {
    let (cube, _) = gen_synthetic_cube(32, 32, 40, 4, 42).unwrap();
    let config = ModelConfig {
        hidden: 32,
        expansion: 3,
        layers: 2,
        ..ModelConfig::default()
    };
    let model = EsMhc::for_cube(config, &cube, &boundaries_for_expansion(3).unwrap(), 4).unwrap();
    let input = ModelInput::new(&cube, &model).unwrap();
    (model, input)
}
