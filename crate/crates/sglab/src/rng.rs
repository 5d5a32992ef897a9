//! Counter-based RNG stream discipline.
//!
//! Every Monte Carlo replicate draws from an independent ChaCha8 stream
//! derived from (master seed, replicate index). Streams are independent of
//! scheduling: replicate k reads the same bytes whether it runs first,
//! last, or concurrently with others, so results are a pure function of
//! (configuration, master seed).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG handed to one replicate: stream `replicate` of the cipher keyed
/// by `master`.
pub fn replicate_rng(master: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(replicate);
    rng
}
