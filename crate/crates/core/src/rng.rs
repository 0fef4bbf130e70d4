//! Seed derivation so every random stream is a pure function of the master
//! seed and a position, independent of the order work is done in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_SYNTH: u64 = 1;
pub const STREAM_AUGMENT: u64 = 2;
pub const STREAM_SHUFFLE: u64 = 3;
pub const STREAM_INIT: u64 = 4;
pub const STREAM_TRITRAIN: u64 = 5;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream)) ^ index)
}

pub fn rng_for(master: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_positions_get_distinct_seeds() {
        let mut seen = std::collections::BTreeSet::new();
        for s in 0..4 {
            for i in 0..500 {
                assert!(seen.insert(derive_seed(42, s, i)));
            }
        }
        assert_ne!(derive_seed(1, 1, 1), derive_seed(2, 1, 1));
    }
}
