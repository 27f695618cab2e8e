//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! whose seed is `splitmix64(root ^ fnv1a(label))`, so streams are fixed by
//! the root seed and a label and never depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Seed of the stream named `label` under `root`.
pub fn stream_seed(root: u64, label: &str) -> u64 {
    splitmix64(root ^ fnv1a(label))
}

/// Seed of the `index`-th member of a numbered family of streams.
pub fn indexed_seed(root: u64, label: &str, index: u64) -> u64 {
    splitmix64(stream_seed(root, label) ^ splitmix64(index))
}

pub fn stream_rng(root: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(root, label))
}
