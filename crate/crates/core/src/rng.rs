//! Reproducible standard-normal noise for the reparametrized samples.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor2D;

/// A ChaCha8 keystream addressed by `(seed, stream, counter)`.
///
/// ChaCha is counter based, so a stream restored from the same triple
/// produces the same draws no matter what was drawn before. Each normal
/// variate consumes exactly four 32-bit words (two `u64`s, Box–Muller).
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

/// Serializable position of an [`RngStream`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub counter: u128,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut s = Self::with_stream(state.seed, state.stream);
        s.rng.set_word_pos(state.counter);
        s
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            stream: self.stream,
            counter: self.rng.get_word_pos(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Word position in the keystream.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Independent sub-stream keyed by `(seed, id)`, leaving `self` untouched.
    pub fn fork(&self, id: u64) -> Self {
        Self::with_stream(
            self.seed ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15),
            self.stream.wrapping_add(id),
        )
    }

    /// Uniform on the open interval (0, 1).
    fn open_unit(&mut self) -> f64 {
        // 53 random mantissa bits, shifted off zero.
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.open_unit();
        let u2 = self.open_unit();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform index in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Tensor2D {
        let data = (0..rows * cols).map(|_| self.standard_normal()).collect();
        Tensor2D::new(rows, cols, data).expect("length matches by construction")
    }
}
