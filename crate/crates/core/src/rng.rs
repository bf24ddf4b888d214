use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent deterministic stream for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: &str, index: u64) -> Rng {
    let mut h = splitmix(seed);
    for b in tag.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    h = splitmix(h ^ index);
    ChaCha8Rng::seed_from_u64(h)
}

/// A derived seed for sub-components that take a plain `u64`.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = splitmix(seed ^ 0x243f_6a88_85a3_08d3);
    for b in tag.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    h
}
