//! Deterministic random streams.
//!
//! Every run is driven by a single 64-bit root seed. Independent substreams
//! are derived by mixing `(root, domain, index)` through a SplitMix64 chain
//! into a 256-bit ChaCha key. The rule is fixed and platform independent, so
//! replica `i` of a given domain sees the same stream regardless of thread
//! count or scheduling:
//!
//! ```text
//! state  = splitmix(root)  xor  domain * 0xD6E8FEB86659FD93
//! state  = splitmix(state) xor  index  * 0xCA5A826395121157
//! key    = next four splitmix outputs (little-endian)
//! ```
//!
//! Domains keep streams of different purposes disjoint; each module declares
//! the domain constants it consumes.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// The RNG used throughout the crate.
pub type Stream = ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the substream for `(root, domain, index)`.
pub fn substream(root: u64, domain: u64, index: u64) -> Stream {
    let mut state = root;
    let _ = splitmix64(&mut state);
    state ^= domain.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    let _ = splitmix64(&mut state);
    state ^= index.wrapping_mul(0xCA5A_8263_9512_1157);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
