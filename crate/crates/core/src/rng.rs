//! Seed derivation for independent, reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a tag path into the master seed. Distinct paths give unrelated streams.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(master), |acc, &t| mix(acc ^ mix(t)))
}

/// A generator for the stream identified by `path` under `master`.
pub fn stream(master: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, path))
}

/// Stream tags, kept in one place so that no two subsystems share a stream.
pub mod tag {
    pub const GRAPH: u64 = 1;
    pub const PLACEMENT: u64 = 2;
    pub const RADIO: u64 = 3;
    pub const TASK: u64 = 4;
    pub const SELECTION: u64 = 5;
    pub const MOBILITY: u64 = 6;
    pub const UPLINK_NOISE: u64 = 7;
    pub const DOWNLINK_NOISE: u64 = 8;
    pub const BASELINE: u64 = 9;
}
