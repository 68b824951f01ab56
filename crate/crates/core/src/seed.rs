//! Hierarchical seed derivation.
//!
//! Every random stream in an experiment is keyed by
//! `master ⊕ mix(purpose, round, client)`, so a stream's contents depend only
//! on what it is for and never on the order in which streams are created.
//! `mix` is FNV-1a over the purpose bytes followed by splitmix64 folding of
//! the round and client indices; both are fixed, documented functions, so
//! seeds are stable across platforms and toolchains.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, purpose: &str, round: u64, client: u64) -> u64 {
    let h = splitmix64(fnv1a(purpose.as_bytes()));
    let h = splitmix64(h ^ round);
    let h = splitmix64(h ^ client.rotate_left(32));
    master ^ h
}

pub fn rng_for(master: u64, purpose: &str, round: u64, client: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, purpose, round, client))
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
