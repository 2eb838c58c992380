use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Counter-based generator for one (seed, stream) pair. Distinct streams
/// (e.g. shard indices) draw independent, reproducible variates.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
