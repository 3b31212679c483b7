//! Seeded random streams. Every consumer draws from its own ChaCha stream so
//! that, for a fixed seed, layout removal, coefficient draws and initial
//! guesses never perturb each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Removal = 1,
    Epsilon = 2,
    InitialGuess = 3,
    Probe = 4,
}

pub fn seeded_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Vector with entries uniform on `[-1, 1]`.
pub fn uniform_vector(len: usize, seed: u64, stream: Stream) -> Vec<f64> {
    use rand::Rng;
    let mut rng = seeded_rng(seed, stream);
    (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect()
}
