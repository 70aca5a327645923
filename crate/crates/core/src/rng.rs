//! Named, order-independent random substreams derived from one seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a seed with a stream label and indices into a new 64-bit seed.
pub fn derive(seed: u64, label: &str, idx: &[u64]) -> u64 {
    let mut h = splitmix(seed);
    for byte in label.bytes() {
        h = splitmix(h ^ u64::from(byte));
    }
    for &i in idx {
        h = splitmix(h ^ i);
    }
    h
}

pub fn stream(seed: u64, label: &str, idx: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, label, idx))
}
