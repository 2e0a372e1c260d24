//! Conventional and multi-section Bloom filters.
//!
//! Bit positions come from double hashing over one keyed 128-bit digest:
//! `index_i = (h_a + i * h_b) mod bits`, with `h_b` forced odd. The
//! multi-section filter spends one more keyed hash on choosing the section,
//! then runs the same k-position scheme inside that section only.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::ConfigError;
use crate::hash::{hash128, hash64};

pub const DEFAULT_HASHES: u32 = 4;

/// False-positive probability of a Bloom filter with `m` bits, `k` hash
/// functions and `n` inserted elements: `(1 - (1 - 1/m)^(kn))^k`.
pub fn expected_fp(m: u64, n: u64, k: u32) -> f64 {
    if n == 0 || m == 0 || k == 0 {
        return 0.0;
    }
    // (1 - 1/m)^(kn) evaluated through log1p so that huge m keeps its precision.
    let exponent = k as f64 * n as f64;
    let empty = libm::exp(exponent * libm::log1p(-1.0 / m as f64));
    libm::pow(1.0 - empty, k as f64)
}

#[inline]
fn probes(seed: u64, element: &[u8], k: u32, bits: u64) -> impl Iterator<Item = u64> {
    let (a, b) = hash128(seed, element);
    let b = b | 1;
    (0..k as u64).map(move |i| a.wrapping_add(i.wrapping_mul(b)) % bits)
}

#[inline]
fn test_bit(words: &[u64], i: u64) -> bool {
    words[(i >> 6) as usize] & (1u64 << (i & 63)) != 0
}

#[inline]
fn set_bit(words: &mut [u64], i: u64) {
    words[(i >> 6) as usize] |= 1u64 << (i & 63);
}

/// An m-bit Bloom filter with k hash positions per element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BloomFilter {
    words: Vec<u64>,
    bits: u64,
    hashes: u32,
    inserted: u64,
    seed: u64,
}

impl BloomFilter {
    pub fn new(bits: u64, hashes: u32, seed: u64) -> Result<Self, ConfigError> {
        if bits == 0 || hashes == 0 {
            return Err(ConfigError::Bloom { m: bits, k: hashes });
        }
        Ok(Self { words: vec![0; bits.div_ceil(64) as usize], bits, hashes, inserted: 0, seed })
    }

    /// Rebuilds a filter from stored parts. `words` must hold `ceil(bits / 64)` words.
    pub fn from_parts(
        bits: u64,
        hashes: u32,
        seed: u64,
        inserted: u64,
        words: Vec<u64>,
    ) -> Result<Self, ConfigError> {
        if bits == 0 || hashes == 0 || words.len() as u64 != bits.div_ceil(64) {
            return Err(ConfigError::Bloom { m: bits, k: hashes });
        }
        Ok(Self { words, bits, hashes, inserted, seed })
    }

    pub fn insert(&mut self, element: &[u8]) {
        for i in probes(self.seed, element, self.hashes, self.bits) {
            set_bit(&mut self.words, i);
        }
        self.inserted += 1;
    }

    pub fn contains(&self, element: &[u8]) -> bool {
        probes(self.seed, element, self.hashes, self.bits).all(|i| test_bit(&self.words, i))
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }
    pub fn hashes(&self) -> u32 {
        self.hashes
    }
    pub fn inserted(&self) -> u64 {
        self.inserted
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn popcount(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Storage size of the bit array.
    pub fn byte_len(&self) -> u64 {
        self.bits.div_ceil(8)
    }

    pub fn expected_fp(&self) -> f64 {
        expected_fp(self.bits, self.inserted, self.hashes)
    }
}

/// `j` equal Bloom filters sharing one bit array; a separate keyed hash
/// picks the section for each element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiSectionBloomFilter {
    words: Vec<u64>,
    sections: usize,
    section_bits: u64,
    hashes: u32,
    section_seed: u64,
    seed: u64,
    section_inserted: Vec<u64>,
}

impl MultiSectionBloomFilter {
    /// Splits `total_bits` into `sections` sections, each rounded down to a
    /// multiple of 64 bits. Leftover bits are not used.
    pub fn new(
        total_bits: u64,
        sections: usize,
        hashes: u32,
        section_seed: u64,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        if hashes == 0 {
            return Err(ConfigError::Bloom { m: total_bits, k: hashes });
        }
        if sections == 0 {
            return Err(ConfigError::Sections { total_bits, sections });
        }
        let section_bits = total_bits / sections as u64 / 64 * 64;
        if section_bits == 0 {
            return Err(ConfigError::Sections { total_bits, sections });
        }
        let words = vec![0; (section_bits / 64) as usize * sections];
        Ok(Self {
            words,
            sections,
            section_bits,
            hashes,
            section_seed,
            seed,
            section_inserted: vec![0; sections],
        })
    }

    pub fn from_parts(
        sections: usize,
        section_bits: u64,
        hashes: u32,
        section_seed: u64,
        seed: u64,
        section_inserted: Vec<u64>,
        words: Vec<u64>,
    ) -> Result<Self, ConfigError> {
        let total_bits = section_bits.saturating_mul(sections as u64);
        if hashes == 0 {
            return Err(ConfigError::Bloom { m: total_bits, k: hashes });
        }
        if sections == 0
            || section_bits == 0
            || !section_bits.is_multiple_of(64)
            || section_inserted.len() != sections
            || words.len() as u64 != total_bits / 64
        {
            return Err(ConfigError::Sections { total_bits, sections });
        }
        Ok(Self { words, sections, section_bits, hashes, section_seed, seed, section_inserted })
    }

    #[inline]
    pub fn section_of(&self, element: &[u8]) -> usize {
        (hash64(self.section_seed, element) % self.sections as u64) as usize
    }

    #[inline]
    fn section_words(&self, section: usize) -> core::ops::Range<usize> {
        let per = (self.section_bits / 64) as usize;
        section * per..(section + 1) * per
    }

    /// Inserts into the element's section and returns that section.
    pub fn insert(&mut self, element: &[u8]) -> usize {
        let s = self.section_of(element);
        let range = self.section_words(s);
        let words = &mut self.words[range];
        for i in probes(self.seed, element, self.hashes, self.section_bits) {
            set_bit(words, i);
        }
        self.section_inserted[s] += 1;
        s
    }

    /// The element's section if the section reports it present.
    pub fn query(&self, element: &[u8]) -> Option<usize> {
        let s = self.section_of(element);
        let words = &self.words[self.section_words(s)];
        probes(self.seed, element, self.hashes, self.section_bits)
            .all(|i| test_bit(words, i))
            .then_some(s)
    }

    pub fn sections(&self) -> usize {
        self.sections
    }
    pub fn section_bits(&self) -> u64 {
        self.section_bits
    }
    pub fn total_bits(&self) -> u64 {
        self.section_bits * self.sections as u64
    }
    pub fn hashes(&self) -> u32 {
        self.hashes
    }
    pub fn section_seed(&self) -> u64 {
        self.section_seed
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn words(&self) -> &[u64] {
        &self.words
    }
    pub fn section_inserted(&self) -> &[u64] {
        &self.section_inserted
    }

    pub fn inserted(&self) -> u64 {
        self.section_inserted.iter().sum()
    }

    pub fn max_section_load(&self) -> u64 {
        self.section_inserted.iter().copied().max().unwrap_or(0)
    }

    pub fn byte_len(&self) -> u64 {
        self.total_bits() / 8
    }

    pub fn popcount(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Section false-positive estimate at the most loaded section.
    pub fn worst_section_fp(&self) -> f64 {
        expected_fp(self.section_bits, self.max_section_load(), self.hashes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn keys(n: usize, seed: u64) -> Vec<[u8; 16]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut k = [0u8; 16];
                rng.fill_bytes(&mut k);
                k
            })
            .collect()
    }

    #[test]
    fn expected_fp_edges() {
        assert_eq!(expected_fp(1000, 0, 4), 0.0);
        assert_eq!(expected_fp(1, 1, 1), 1.0);
        let v = expected_fp(1_000_000, 100_000, 5);
        let approx = libm::pow(1.0 - libm::exp(-0.5), 5.0);
        assert!((v - approx).abs() / approx < 1e-4, "{v} vs {approx}");
        assert!((v - 9.4e-3).abs() < 0.1e-3);
    }

    #[test]
    fn expected_fp_matches_naive_power_for_small_m() {
        // Direct evaluation without the log1p route.
        let (m, n, k) = (97u64, 13u64, 3u32);
        let naive = (1.0 - (1.0 - 1.0 / m as f64).powi((k as u64 * n) as i32)).powi(k as i32);
        assert!((expected_fp(m, n, k) - naive).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_filters() {
        assert!(BloomFilter::new(0, 4, 0).is_err());
        assert!(BloomFilter::new(64, 0, 0).is_err());
        assert!(MultiSectionBloomFilter::new(64 * 16 - 1, 16, 4, 0, 0).is_err());
        assert!(MultiSectionBloomFilter::new(64 * 16, 0, 4, 0, 0).is_err());
    }

    #[test]
    fn fresh_filters_answer_no() {
        let bf = BloomFilter::new(1 << 12, 4, 1).unwrap();
        let msbf = MultiSectionBloomFilter::new(1 << 14, 16, 4, 2, 3).unwrap();
        for k in keys(100, 9) {
            assert!(!bf.contains(&k));
            assert_eq!(msbf.query(&k), None);
        }
    }

    #[test]
    fn repeated_insert_only_counts() {
        let mut bf = BloomFilter::new(1 << 12, 4, 1).unwrap();
        bf.insert(b"hello");
        let snapshot = bf.words().to_vec();
        bf.insert(b"hello");
        assert_eq!(bf.words(), &snapshot[..]);
        assert_eq!(bf.inserted(), 2);
        assert!(bf.contains(b"hello"));
    }

    #[test]
    fn popcount_tracks_expected_fill() {
        let m = 1u64 << 15;
        let mut bf = BloomFilter::new(m, 4, 77).unwrap();
        for k in keys(1000, 1) {
            bf.insert(&k);
        }
        let expected = m as f64 * (1.0 - libm::pow(1.0 - 1.0 / m as f64, 4000.0));
        let got = bf.popcount() as f64;
        assert!((got - expected).abs() / expected < 0.05, "{got} vs {expected}");
        assert!(bf.popcount() <= 4 * bf.inserted());
    }

    #[test]
    fn empirical_fp_matches_estimate() {
        let m = 1u64 << 15;
        let mut bf = BloomFilter::new(m, 4, 5).unwrap();
        for k in keys(1000, 2) {
            bf.insert(&k);
        }
        let probes = keys(100_000, 3);
        let hits = probes.iter().filter(|k| bf.contains(*k)).count();
        let fp = hits as f64 / probes.len() as f64;
        let est = expected_fp(m, 1000, 4);
        assert!((fp - est).abs() / est < 0.2, "{fp} vs {est}");
    }

    #[test]
    fn section_choice_is_stable_and_trivial_for_one_section() {
        let one = MultiSectionBloomFilter::new(1 << 12, 1, 4, 8, 9).unwrap();
        let many = MultiSectionBloomFilter::new(1 << 16, 16, 4, 8, 9).unwrap();
        for k in keys(200, 4) {
            assert_eq!(one.section_of(&k), 0);
            assert_eq!(many.section_of(&k), many.section_of(&k));
            assert!(many.section_of(&k) < 16);
        }
    }

    #[test]
    fn sections_do_not_touch_each_other() {
        let mut f = MultiSectionBloomFilter::new(64 * 8 * 4, 8, 4, 1, 2).unwrap();
        let ks = keys(64, 6);
        let a = &ks[0];
        let sa = f.insert(a);
        let b = ks.iter().find(|k| f.section_of(*k) != sa).unwrap();
        let before: Vec<u64> = f.words().to_vec();
        let sb = f.insert(b);
        let per = (f.section_bits() / 64) as usize;
        for s in 0..8 {
            let r = s * per..(s + 1) * per;
            if s != sb {
                assert_eq!(&f.words()[r.clone()], &before[r]);
            }
        }
        assert_eq!(f.query(a), Some(sa));
        assert_eq!(f.query(b), Some(sb));
    }

    #[test]
    fn section_bits_round_down_to_words() {
        let f = MultiSectionBloomFilter::new(10_000, 3, 4, 0, 0).unwrap();
        assert_eq!(f.section_bits(), 3328);
        assert!(10_000 - f.total_bits() < 3 * 64);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn no_false_negatives(
            elems in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..40), 1..300),
            m in 64u64..5000,
            j in 1usize..8,
            k in 1u32..6,
        ) {
            let mut bf = BloomFilter::new(m, k, 3).unwrap();
            let mut msbf = MultiSectionBloomFilter::new(m.max(64 * j as u64), j, k, 4, 5).unwrap();
            let mut sections = Vec::new();
            for e in &elems {
                bf.insert(e);
                sections.push(msbf.insert(e));
            }
            for (e, s) in elems.iter().zip(sections) {
                prop_assert!(bf.contains(e));
                prop_assert_eq!(msbf.query(e), Some(s));
            }
            prop_assert_eq!(msbf.inserted(), elems.len() as u64);
            prop_assert!(bf.popcount() <= k as u64 * bf.inserted());
        }
    }
}
