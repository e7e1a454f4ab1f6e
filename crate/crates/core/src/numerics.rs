//! Dense numeric substrate: matrices, vectors, seeded RNG, linear solves,
//! SVD, and a finite-difference derivative oracle.
//!
//! Everything here is row-major `f64` at desk scale. Constructors reject
//! non-finite entries so NaN/Inf cannot enter the pipeline silently.

mod grad;
mod linalg;
mod matrix;
mod rng;

pub use grad::finite_diff_grad;
pub use linalg::{solve_spd, svd, Cholesky, Svd};
pub use matrix::{Matrix, Vector};
pub use rng::{bernoulli_mask, Rng, RNG_ALGORITHM};
