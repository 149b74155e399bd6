//! Seeded random streams.
//!
//! Every stage draws from its own ChaCha stream derived from the run seed and a
//! stream id, so stages can be rerun independently with identical results.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const CORPUS_STREAM: u64 = 1;
pub const VAE_STREAM: u64 = 2;
pub const TTS_STREAM: u64 = 3;
pub const SAMPLING_STREAM: u64 = 4;
pub const TEMPLATE_STREAM: u64 = 5;
pub const ANALYSIS_STREAM: u64 = 6;
pub const UNCOND_STREAM: u64 = 7;

pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}
