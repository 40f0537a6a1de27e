//! Stable seed derivation. Every stochastic stage draws from a generator
//! seeded by mixing the master seed with string tags (scene id, round, stage),
//! so results never depend on iteration or thread order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `master` with each tag in order.
pub fn derive_seed(master: u64, tags: &[&str]) -> u64 {
    let mut state = splitmix64(master);
    for tag in tags {
        let mut h = FNV_OFFSET;
        for b in tag.bytes().chain(std::iter::once(0xff)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        state = splitmix64(state ^ h);
    }
    state
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derive_rng(master: u64, tags: &[&str]) -> ChaCha8Rng {
    rng_from(derive_seed(master, tags))
}
