//! Counter-based random numbers for deterministic parallel simulations.
//!
//! Simulation passes run on an arbitrary number of worker threads in an
//! arbitrary order, so stateful generators would make trajectories depend on
//! the schedule. Instead, every random decision is a pure hash of
//! `(seed, stream, counter)` — e.g. (run seed, iteration/phase, cell index)
//! — which makes runs bit-identical across worker counts.

/// Strong 64-bit mix (finalizer-style: xor-shift-multiply rounds).
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic random word for one decision point.
#[inline]
pub fn counter_rng(seed: u64, stream: u64, counter: u64) -> u64 {
    mix(seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(mix(counter.wrapping_add(0x2545_F491_4F6C_DD1D))))
}

/// Maps a random word to `0..n`. Modulo bias is negligible for the small `n`
/// used here (choices among at most a few neighbors).
#[inline]
pub fn rand_below(word: u64, n: u64) -> u64 {
    debug_assert!(n > 0);
    word % n
}
