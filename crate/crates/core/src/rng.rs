//! Deterministic RNG streams.
//!
//! Every random draw in a run comes from a stream keyed by the master seed, a
//! purpose tag and up to two indices (usually node and iteration). Streams are
//! independent of evaluation order, so parallel evaluation cannot change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Purpose tag mixed into the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Gradient = 1,
    Topology = 2,
    Init = 3,
    Data = 4,
    Probe = 5,
    Estimate = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of `(master, tag, a, b)` used as the stream seed.
pub fn stream_key(master: u64, tag: Stream, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ tag as u64);
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(17))
}

pub fn stream(master: u64, tag: Stream, a: u64, b: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(stream_key(master, tag, a, b))
}
