//! Deterministic random streams.
//!
//! Every stream is a ChaCha8 generator whose key is derived from the run seed
//! and a purpose tag, and whose 64-bit stream id is the realization index.
//! Realization `r` therefore never shares a stream with realization `r' != r`,
//! and results do not depend on how realizations are scheduled on workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Distinct purposes get unrelated keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Initial velocities followed by the jump process of one realization.
    Dynamics,
    /// Monte Carlo angular quadrature inside estimators, salted per call site.
    Quadrature(u64),
    /// Test and verification harnesses.
    Harness(u64),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Dynamics => 0x6b61_6c5f_6479_6e00,
            Purpose::Quadrature(salt) => 0x6b61_6c5f_7175_6100 ^ splitmix64(salt),
            Purpose::Harness(salt) => 0x6b61_6c5f_6861_7200 ^ splitmix64(salt.wrapping_add(1)),
        }
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The stream for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    let mut key = [0u8; 32];
    let mut state = seed ^ purpose.tag();
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
