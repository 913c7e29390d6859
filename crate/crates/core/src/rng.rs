//! Seed hierarchy. Every stage draws from its own ChaCha8 stream, keyed by
//! `derive_seed(master, stage_name)`:
//!
//! ```text
//! h    = FNV-1a-64(stage_name bytes)
//! seed = splitmix64(master XOR h)
//! ```
//!
//! so any stage can be re-run in isolation with the same randomness.

use rand::SeedableRng;

pub type StageRng = rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stage: &str) -> u64 {
    splitmix64(master ^ fnv1a64(stage.as_bytes()))
}

pub fn stage_rng(master: u64, stage: &str) -> StageRng {
    StageRng::seed_from_u64(derive_seed(master, stage))
}

pub fn seeded(seed: u64) -> StageRng {
    StageRng::seed_from_u64(seed)
}
