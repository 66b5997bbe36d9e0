//! Counter-based random streams.
//!
//! Every random quantity in the lab is drawn from a ChaCha8 stream addressed by
//! `(seed, purpose, index)`. The key is derived from the seed and purpose tag;
//! the index selects the ChaCha stream. Two draws with the same address are
//! identical no matter which thread produces them or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Random stream for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: &str, index: u64) -> LabRng {
    let mut state = seed ^ fnv1a(tag).rotate_left(17);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Derive a child seed, used when a component needs its own seed value
/// (for example a feature map that records the seed it was built from).
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut state = seed ^ fnv1a(tag) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    splitmix64(&mut state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_address_same_stream() {
        let a: Vec<u64> = stream(7, "data", 3).random_iter().take(8).collect();
        let b: Vec<u64> = stream(7, "data", 3).random_iter().take(8).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn addresses_are_independent() {
        let a: u64 = stream(7, "data", 3).random();
        assert_ne!(a, stream(7, "data", 4).random::<u64>());
        assert_ne!(a, stream(7, "teacher", 3).random::<u64>());
        assert_ne!(a, stream(8, "data", 3).random::<u64>());
    }
}
