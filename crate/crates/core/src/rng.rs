//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha`), whose
//! output is value-stable across platforms and releases. One 64-bit seed
//! fans out into independent numbered streams so that separate consumers
//! (amplitudes, each tap's chain, Doppler) never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Name of the generator, recorded in trace metadata and manifests.
pub const GENERATOR_NAME: &str = "chacha8";

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
