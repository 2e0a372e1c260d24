//! Sampling of query excerpts that occur exactly once in a corpus.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::flow::{FlowKey, PacketRecord};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Excerpt {
    pub bytes: Vec<u8>,
    pub flow: FlowKey,
    pub packet: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExcerptSet {
    pub excerpts: Vec<Excerpt>,
    /// How many of the requested excerpts could not be found.
    pub shortfall: usize,
}

const ROUNDS: usize = 4;
const BASE: u64 = 0x100_0000_01b3;

/// Polynomial hash of a window, mod 2^64.
struct Roller {
    pow: u64,
}

impl Roller {
    fn new(len: usize) -> Self {
        let mut pow = 1u64;
        for _ in 1..len {
            pow = pow.wrapping_mul(BASE);
        }
        Self { pow }
    }

    fn hash(bytes: &[u8]) -> u64 {
        bytes.iter().fold(0u64, |h, &b| h.wrapping_mul(BASE).wrapping_add(b as u64 + 1))
    }

    #[inline]
    fn roll(&self, h: u64, out: u8, inp: u8) -> u64 {
        h.wrapping_sub((out as u64 + 1).wrapping_mul(self.pow))
            .wrapping_mul(BASE)
            .wrapping_add(inp as u64 + 1)
    }
}

/// Occurrence counts (saturating at 2) of every candidate across all payloads.
fn occurrence_counts(corpus: &[PacketRecord], len: usize, candidates: &[&[u8]]) -> Vec<u8> {
    let mut by_hash: Vec<(u64, usize)> =
        candidates.iter().enumerate().map(|(i, c)| (Roller::hash(c), i)).collect();
    by_hash.sort_unstable();
    let mut prefilter = vec![0u64; 1 << 10];
    for &(h, _) in &by_hash {
        let k = (h >> 48) as usize;
        prefilter[k >> 6] |= 1 << (k & 63);
    }
    let roller = Roller::new(len);
    let mut counts = vec![0u8; candidates.len()];
    for p in corpus {
        let data = &p.payload;
        if data.len() < len {
            continue;
        }
        let mut h = Roller::hash(&data[..len]);
        let mut at = 0;
        loop {
            let k = (h >> 48) as usize;
            if prefilter[k >> 6] & (1 << (k & 63)) != 0 {
                let first = by_hash.partition_point(|&(x, _)| x < h);
                for &(_, ci) in by_hash[first..].iter().take_while(|&&(x, _)| x == h) {
                    if counts[ci] < 2 && candidates[ci] == &data[at..at + len] {
                        counts[ci] += 1;
                    }
                }
            }
            if at + len == data.len() {
                break;
            }
            h = roller.roll(h, data[at], data[at + len]);
            at += 1;
        }
    }
    counts
}

/// Picks `count` excerpts of `length` bytes, each a substring of one payload
/// and found nowhere else in the corpus. Start positions are uniform over all
/// valid positions, so large flows contribute proportionally more.
pub fn extract_unique_excerpts(
    corpus: &[PacketRecord],
    length: usize,
    count: usize,
    seed: u64,
) -> ExcerptSet {
    let mut out = ExcerptSet { excerpts: Vec::new(), shortfall: count };
    if length == 0 || count == 0 {
        return out;
    }
    // Cumulative count of valid start positions per packet.
    let mut cum = Vec::with_capacity(corpus.len());
    let mut total = 0u64;
    for p in corpus {
        total += (p.payload.len() + 1).saturating_sub(length) as u64;
        cum.push(total);
    }
    if total == 0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken: Vec<(usize, usize)> = Vec::new();
    for round in 0..ROUNDS {
        let need = count - out.excerpts.len();
        let draws = (need * (2 << round) + 8).min(total as usize);
        let mut picks: Vec<(usize, usize)> = Vec::with_capacity(draws);
        for _ in 0..draws {
            let r = rng.gen_range(0..total);
            let packet = cum.partition_point(|&c| c <= r);
            let before = if packet == 0 { 0 } else { cum[packet - 1] };
            let pick = (packet, (r - before) as usize);
            if !taken.contains(&pick) && !picks.contains(&pick) {
                picks.push(pick);
            }
        }
        let slices: Vec<&[u8]> =
            picks.iter().map(|&(p, o)| &corpus[p].payload[o..o + length]).collect();
        let counts = occurrence_counts(corpus, length, &slices);
        for (i, &(p, o)) in picks.iter().enumerate() {
            if out.excerpts.len() == count {
                break;
            }
            taken.push((p, o));
            if counts[i] == 1 && !out.excerpts.iter().any(|e| e.bytes == slices[i]) {
                out.excerpts.push(Excerpt {
                    bytes: slices[i].to_vec(),
                    flow: corpus[p].flow,
                    packet: p,
                    offset: o,
                });
            }
        }
        if out.excerpts.len() == count {
            break;
        }
    }
    out.shortfall = count - out.excerpts.len();
    out
}
