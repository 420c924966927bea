//! Keyed random streams.
//!
//! Every random draw in the library comes from a stream identified by the
//! master seed, a [`Purpose`] tag and a list of entity indices. Two streams
//! with different keys are independent, so the order in which entities are
//! visited (or whether they are visited in parallel) never changes a draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// What a stream is used for. The discriminant is mixed into the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    InitUsers = 1,
    InitItems = 2,
    UserGroups = 3,
    ItemGroups = 4,
    NoiseExp = 5,
    NoiseGauss = 6,
    Split = 7,
    Folds = 8,
    Subsample = 9,
    PdpSample = 10,
    NoiseCheck = 11,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Opens the stream for `(master_seed, purpose, indices)`.
pub fn stream(master_seed: u64, purpose: Purpose, indices: &[u64]) -> Stream {
    let mut state = master_seed;
    let mut acc = splitmix64(&mut state) ^ (purpose as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    for &ix in indices {
        // length-prefix free: each index is folded through a full mixing round
        let mut s = acc ^ ix.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        acc = splitmix64(&mut s);
    }
    let mut seed = [0u8; 32];
    let mut s = acc ^ (indices.len() as u64);
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
