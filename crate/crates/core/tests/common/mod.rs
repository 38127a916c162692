#![allow(dead_code)]

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topodistill::data::{leave_one_out_split, InteractionLog, SplitDataset};

/// Users drawn from a few taste clusters; each mostly picks items from its
/// own cluster's block.
pub fn clustered_pairs(users: usize, items: usize, clusters: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = items / clusters;
    let mut pairs = Vec::new();
    for u in 0..users {
        let c = u % clusters;
        let n = rng.random_range(6..16);
        let mut picked = std::collections::BTreeSet::new();
        while picked.len() < n {
            let i = if rng.random_bool(0.8) { c * block + rng.random_range(0..block) } else { rng.random_range(0..items) };
            picked.insert(i);
        }
        pairs.extend(picked.into_iter().map(|i| (u, i)));
    }
    pairs
}

pub fn clustered_split(users: usize, items: usize, clusters: usize, seed: u64) -> SplitDataset {
    let log = InteractionLog::from_pairs(users, items, clustered_pairs(users, items, clusters, seed)).unwrap();
    leave_one_out_split(&log, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed))
}

/// The same interactions as a raw `user item` text file.
pub fn clustered_text(users: usize, items: usize, clusters: usize, seed: u64) -> String {
    let mut out = String::from("# user item\n");
    for (u, i) in clustered_pairs(users, items, clusters, seed) {
        writeln!(out, "u{u} i{i}").unwrap();
    }
    out
}
