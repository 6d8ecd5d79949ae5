//! Seed derivation. Every random stream in a run is keyed by the master seed plus a
//! small tuple of integers, so streams are independent of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags keep unrelated consumers of the same master seed apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Partition = 2,
    Synth = 3,
    Exemplar = 4,
    Pretrain = 5,
    Grouping = 6,
    Sampling = 7,
    Shuffle = 8,
    Local = 9,
    Centralized = 10,
    KMeans = 11,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a stream tag and an ordered list of integer keys.
pub fn derive_seed(seed: u64, stream: Stream, keys: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(stream as u64));
    for &k in keys {
        h = splitmix64(h ^ splitmix64(k.wrapping_add(0x2545_F491_4F6C_DD1D)));
    }
    h
}

pub fn stream(seed: u64, stream: Stream, keys: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream, keys))
}
