//! Labeled random sub-streams derived from one root seed.
//!
//! Every random consumer (initialization, splitting, negative sampling,
//! Gumbel noise, probe sampling) draws from its own ChaCha stream so that
//! adding or removing one consumer never shifts the numbers another sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_SPLIT: &str = "split";
pub const STREAM_INIT: &str = "init";
pub const STREAM_BATCHES: &str = "batches";
pub const STREAM_GUMBEL: &str = "gumbel";
pub const STREAM_HEADS: &str = "heads";
pub const STREAM_KMEANS: &str = "kmeans";
pub const STREAM_PROBE: &str = "probe";

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn substream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(label.as_bytes()));
    rng
}
