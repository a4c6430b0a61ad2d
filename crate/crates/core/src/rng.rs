//! Counter-based random streams: every draw gets its own generator keyed by
//! (seed, replicate, draw index), so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for one draw.
pub fn draw_rng(seed: u64, replicate: u64, draw: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&replicate.to_le_bytes());
    key[16..24].copy_from_slice(b"blockaug");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(draw);
    rng
}

/// Derives a child seed, e.g. one per dataset.
pub fn child_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finaliser over the pair
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
