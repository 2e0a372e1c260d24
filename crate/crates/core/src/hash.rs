//! Keyed hashing shared by the filters, the partitioner and the archive checksums.

use xxhash_rust::xxh3::{xxh3_128_with_seed, xxh3_64_with_seed};

#[inline]
pub fn hash64(seed: u64, bytes: &[u8]) -> u64 {
    xxh3_64_with_seed(bytes, seed)
}

/// Two independent 64-bit halves of one 128-bit digest.
#[inline]
pub fn hash128(seed: u64, bytes: &[u8]) -> (u64, u64) {
    let h = xxh3_128_with_seed(bytes, seed);
    (h as u64, (h >> 64) as u64)
}

/// SplitMix64 finalizer; a bijection on `u64`.
#[inline]
pub const fn mix64(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_is_not_identity_and_deterministic() {
        assert_eq!(mix64(0), 0);
        assert_ne!(mix64(1), 1);
        assert_eq!(mix64(12345), mix64(12345));
    }

    #[test]
    fn seeds_separate_domains() {
        assert_ne!(hash64(1, b"abc"), hash64(2, b"abc"));
        let (a, b) = hash128(7, b"abc");
        assert_ne!(a, b);
    }
}
