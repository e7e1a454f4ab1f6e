//! Seeded deterministic random number generation.
//!
//! The generator is pinned to one algorithm so that every stochastic stage
//! (weight init, dropout masks, shuffling, synthetic markets) reproduces
//! bit-for-bit from a seed, on any platform. Changing the algorithm means
//! bumping [`RNG_ALGORITHM`] and accepting that frozen test values move.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Identifier of the generator algorithm, recorded in run manifests.
pub const RNG_ALGORITHM: &str = "xoshiro256++/splitmix64-v1";

const GOLDEN: u64 = 0x9e3779b97f4a7c15;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// xoshiro256++ generator seeded through splitmix64.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
    seed: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Self { s, seed }
    }

    /// The seed this generator was constructed with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent child stream from the construction seed and a
    /// stream index. Splitting does not depend on how many draws this
    /// generator has produced, so parallel work can claim streams up front.
    pub fn split(&self, stream: u64) -> Rng {
        let mut mix = self.seed ^ stream.wrapping_mul(GOLDEN);
        let child_seed = splitmix64(&mut mix);
        Rng::new(child_seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[0]
            .wrapping_add(self.s[3])
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_f64() * n as f64) as usize % n
    }

    /// Standard normal via Box-Muller (two uniform draws per sample).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1], keeps the log finite
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.below(i + 1);
            slice.swap(i, j);
        }
    }
}

/// Matrix of independent Bernoulli(p) draws in `{0, 1}` where `p` is the
/// probability of a one. Deterministic under a fixed generator state.
pub fn bernoulli_mask(rng: &mut Rng, rows: usize, cols: usize, p: f64) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "bernoulli probability {p} outside [0, 1]"
        )));
    }
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = if rng.bernoulli(p) { 1.0 } else { 0.0 };
    }
    Ok(m)
}
