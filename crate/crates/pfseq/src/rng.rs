//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded through these helpers, so a run is a pure function of (seed, config).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a_fold(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// splitmix64 finalizer; spreads low-entropy FNV states over the full word.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a role tag.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let h = fnv1a_fold(FNV_OFFSET, &master.to_le_bytes());
    mix(fnv1a_fold(h, tag.as_bytes()))
}

/// Derive a child seed indexed by one counter (step, utterance, ...).
pub fn derive_seed_n(master: u64, tag: &str, n: u64) -> u64 {
    let h = fnv1a_fold(FNV_OFFSET, &master.to_le_bytes());
    let h = fnv1a_fold(h, tag.as_bytes());
    mix(fnv1a_fold(h, &n.to_le_bytes()))
}

/// Derive a child seed indexed by two counters.
pub fn derive_seed_nn(master: u64, tag: &str, a: u64, b: u64) -> u64 {
    let h = fnv1a_fold(FNV_OFFSET, &master.to_le_bytes());
    let h = fnv1a_fold(h, tag.as_bytes());
    let h = fnv1a_fold(h, &a.to_le_bytes());
    mix(fnv1a_fold(h, &b.to_le_bytes()))
}

/// Derive a child seed from a string key (utterance ids).
pub fn derive_seed_str(master: u64, tag: &str, key: &str) -> u64 {
    let h = fnv1a_fold(FNV_OFFSET, &master.to_le_bytes());
    let h = fnv1a_fold(h, tag.as_bytes());
    mix(fnv1a_fold(h, key.as_bytes()))
}

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_stable_and_tag_sensitive() {
        let a = derive_seed(7, "dropout");
        assert_eq!(a, derive_seed(7, "dropout"));
        assert_ne!(a, derive_seed(7, "coins"));
        assert_ne!(a, derive_seed(8, "dropout"));
        assert_ne!(derive_seed_n(7, "x", 0), derive_seed_n(7, "x", 1));
        assert_ne!(derive_seed_nn(7, "x", 1, 2), derive_seed_nn(7, "x", 2, 1));
    }

    #[test]
    fn streams_reproduce() {
        let mut r1 = seeded(derive_seed(42, "t"));
        let mut r2 = seeded(derive_seed(42, "t"));
        for _ in 0..16 {
            assert_eq!(r1.gen::<f64>().to_bits(), r2.gen::<f64>().to_bits());
        }
    }
}
