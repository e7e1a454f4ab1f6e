//! Shared fixtures for the criterion benchmarks.

use deepindex_core::lstm::{AffineMap, LstmCell};
use deepindex_core::network::{init_weights, Activation, DeepNet, InitScheme, NetworkSpec};
use deepindex_core::numerics::{Matrix, Rng, Vector};

pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

pub fn random_vector(rng: &mut Rng, len: usize) -> Vector {
    Vector::from_vec((0..len).map(|_| rng.normal()).collect()).unwrap()
}

/// A 20 -> [16 tanh, 8 tanh] -> 1 net for forward/backward timing.
pub fn bench_net(rng: &mut Rng) -> DeepNet {
    let spec = NetworkSpec::new(
        20,
        vec![16, 8],
        vec![Activation::Tanh, Activation::Tanh],
        1,
    )
    .unwrap();
    init_weights(&spec, rng, InitScheme::Glorot).unwrap()
}

pub fn bench_lstm(rng: &mut Rng) -> (LstmCell, AffineMap) {
    (LstmCell::init(4, 16, rng), AffineMap::init(1, 16, rng))
}
