//! Counter-based seed derivation.
//!
//! Every random stream in the simulator is keyed by the master seed, a
//! purpose tag and a small tuple of indices (client id, round, trial, ...).
//! Streams never share state, so the order in which work is scheduled has no
//! effect on the numbers drawn.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed, a purpose tag and indices into a fresh 64-bit seed.
pub fn derive_seed(master: u64, tag: &str, parts: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for b in tag.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    // separator so ("ab", [1]) and ("a", [b'b', 1]) cannot collide
    h = splitmix64(h ^ 0xFF);
    for &p in parts {
        h = splitmix64(h ^ p);
    }
    h
}

pub fn stream(master: u64, tag: &str, parts: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, tag, parts))
}
