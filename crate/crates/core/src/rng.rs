//! Seeded random streams.
//!
//! Every record gets its own generator, seeded with
//! `child_seed(base_seed, record_id)`, so results do not depend on the order
//! in which records are processed or on the number of worker threads.
//! The generator is PCG-XSH-RR with 64 bits of state.

use rand::SeedableRng;
use rand_pcg::Pcg32;

pub type QeRng = Pcg32;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over `bytes`, finalized with splitmix64. Stable across platforms and releases.
pub fn stable_hash(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ splitmix64(seed);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h)
}

pub fn child_seed(base_seed: u64, record_id: &str) -> u64 {
    stable_hash(base_seed, record_id.as_bytes())
}

pub fn seeded(seed: u64) -> QeRng {
    QeRng::seed_from_u64(seed)
}

/// Generator for one record of one pipeline stage.
pub fn record_rng(base_seed: u64, stage: &str, record_id: &str) -> QeRng {
    seeded(child_seed(stable_hash(base_seed, stage.as_bytes()), record_id))
}
