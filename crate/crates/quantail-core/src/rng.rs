//! Deterministic RNG stream derivation.
//!
//! Every stochastic work unit (a location's profile, a sample draw, an MCMC
//! chain) gets its own ChaCha stream seeded by an avalanche hash of the
//! master seed plus a purpose tag and the unit's ids. Sibling streams are
//! decorrelated no matter how the caller schedules the work, which is what
//! makes the parallel and sequential execution paths byte-identical.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tag separating the RNG streams hanging off one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Shadowing = 1,
    Profile = 2,
    TrainSamples = 3,
    LocalSamples = 4,
    Reference = 5,
    Locations = 6,
    Mcmc = 7,
    BiasDemo = 8,
}

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// splitmix64 finalizer; full avalanche on 64 bits.
fn avalanche(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from the master seed, a stream tag, and unit ids.
pub fn child_seed(master: u64, stream: Stream, ids: &[u64]) -> u64 {
    let mut h = avalanche(master.wrapping_add(GAMMA));
    h = avalanche(h ^ (stream as u64).wrapping_mul(GAMMA));
    for &id in ids {
        h = avalanche(h.wrapping_add(GAMMA) ^ id);
    }
    h
}

/// ChaCha stream for one work unit. See [`child_seed`].
pub fn stream_rng(master: u64, stream: Stream, ids: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(master, stream, ids))
}
