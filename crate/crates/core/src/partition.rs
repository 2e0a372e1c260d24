//! Content-defined payload partitioning.
//!
//! Every q-gram of the payload is hashed with a seeded polynomial rolling
//! hash. Winnowing picks the rightmost minimum hash of every window of
//! `window` consecutive hashes; the selected positions are block boundaries.
//! A block runs from `overlap` bytes before the previous boundary through the
//! current boundary (inclusive), so neighbouring blocks share `overlap + 1`
//! bytes and every interior block is `overlap + 2 ..= window + overlap + 1`
//! bytes long. With the defaults (64 / 4) that is 6 to 69 bytes.
//!
//! Boundaries depend only on local content, so a substring shared by two
//! payloads is cut identically away from its ends. That is what lets an
//! excerpt be queried without trying every alignment.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::error::ConfigError;
use crate::hash::mix64;

pub const DEFAULT_HASH_SEED: u64 = 0x5eed_cb1d_0000_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PartitionConfig {
    /// Winnowing window, in q-gram positions.
    pub window: usize,
    /// Bytes each block repeats from before the previous boundary.
    pub overlap: usize,
    /// Rolling-hash width in bytes.
    pub qgram: usize,
    /// Downsampling threshold: blocks shorter than this are not digested.
    pub threshold: usize,
    pub hash_seed: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { window: 64, overlap: 4, qgram: 4, threshold: 40, hash_seed: DEFAULT_HASH_SEED }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.window < 2 {
            return Err(ConfigError::Window(self.window));
        }
        if self.qgram < 1 {
            return Err(ConfigError::Qgram(self.qgram));
        }
        Ok(())
    }

    pub fn min_block_len(&self) -> usize {
        self.overlap + 2
    }

    pub fn max_block_len(&self) -> usize {
        self.window + self.overlap + 1
    }

    pub fn with_threshold(mut self, threshold: usize) -> Self {
        self.threshold = threshold;
        self
    }
}

/// Where a block sits relative to the payload edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Starts at offset 0: either before the first boundary, or clamped
    /// because the previous boundary is closer than `overlap` to the start.
    Leading,
    /// Bounded by two consecutive boundaries with the full overlap prefix.
    Interior,
    /// Runs from the last boundary to the end of the payload.
    Trailing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block<'a> {
    pub bytes: &'a [u8],
    pub start: usize,
    pub kind: BlockKind,
    /// `bytes.len() >= threshold`.
    pub kept: bool,
}

impl Block<'_> {
    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn end(&self) -> usize {
        self.start + self.bytes.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition<'a> {
    pub blocks: Vec<Block<'a>>,
}

impl Partition<'_> {
    /// True when the payload was too short to yield any in-bounds block.
    pub fn no_blocks(&self) -> bool {
        self.blocks.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Downsampled<'a> {
    pub kept: Vec<Block<'a>>,
    pub all_discarded: bool,
}

const BASE: u64 = 0x9e37_79b9_7f4a_7c15;

/// Seeded polynomial rolling hash over q-grams.
#[derive(Clone)]
pub struct QgramHasher {
    table: [u64; 256],
    width: usize,
    lead: u64,
}

impl QgramHasher {
    pub fn new(width: usize, seed: u64) -> Self {
        let mut table = [0u64; 256];
        for (b, slot) in table.iter_mut().enumerate() {
            *slot = mix64(seed ^ mix64(b as u64 + 1));
        }
        let mut lead = 1u64;
        for _ in 1..width {
            lead = lead.wrapping_mul(BASE);
        }
        Self { table, width, lead }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Byte-substitution value used for `b`; exposed for reference checks.
    pub fn byte_value(&self, b: u8) -> u64 {
        self.table[b as usize]
    }

    /// Replaces `out` with one hash per q-gram position of `payload`.
    pub fn hashes_into(&self, payload: &[u8], out: &mut Vec<u64>) {
        out.clear();
        let q = self.width;
        if q == 0 || payload.len() < q {
            return;
        }
        out.reserve(payload.len() - q + 1);
        let mut h = 0u64;
        for &b in &payload[..q] {
            h = h.wrapping_mul(BASE).wrapping_add(self.table[b as usize]);
        }
        out.push(mix64(h));
        for i in q..payload.len() {
            let gone = self.table[payload[i - q] as usize].wrapping_mul(self.lead);
            h = h
                .wrapping_sub(gone)
                .wrapping_mul(BASE)
                .wrapping_add(self.table[payload[i] as usize]);
            out.push(mix64(h));
        }
    }
}

/// One hash per q-gram position; empty when the payload is shorter than q.
pub fn rolling_hashes(payload: &[u8], cfg: &PartitionConfig) -> Vec<u64> {
    let mut out = Vec::new();
    QgramHasher::new(cfg.qgram, cfg.hash_seed).hashes_into(payload, &mut out);
    out
}

fn winnow_into(hashes: &[u64], window: usize, deque: &mut VecDeque<usize>, out: &mut Vec<usize>) {
    out.clear();
    deque.clear();
    if hashes.is_empty() {
        return;
    }
    if hashes.len() < window {
        let mut best = 0;
        for (i, &h) in hashes.iter().enumerate() {
            if h <= hashes[best] {
                best = i;
            }
        }
        out.push(best);
        return;
    }
    for (i, &h) in hashes.iter().enumerate() {
        // Popping on ties keeps the rightmost minimum at the front.
        while deque.back().is_some_and(|&j| hashes[j] >= h) {
            deque.pop_back();
        }
        deque.push_back(i);
        if deque[0] + window <= i {
            deque.pop_front();
        }
        if i + 1 >= window {
            let sel = deque[0];
            if out.last() != Some(&sel) {
                out.push(sel);
            }
        }
    }
}

/// Rightmost-minimum winnowing. Positions come back strictly increasing and
/// every run of `window` consecutive positions contains at least one.
pub fn winnow_boundaries(hashes: &[u64], window: usize) -> Vec<usize> {
    let mut out = Vec::new();
    winnow_into(hashes, window.max(1), &mut VecDeque::new(), &mut out);
    out
}

/// Reusable partitioning state; avoids per-payload allocation on the digest path.
#[derive(Clone)]
pub struct Partitioner {
    cfg: PartitionConfig,
    hasher: QgramHasher,
    hashes: Vec<u64>,
    deque: VecDeque<usize>,
    bounds: Vec<usize>,
}

impl Partitioner {
    pub fn new(cfg: PartitionConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(Self {
            hasher: QgramHasher::new(cfg.qgram, cfg.hash_seed),
            cfg,
            hashes: Vec::new(),
            deque: VecDeque::new(),
            bounds: Vec::new(),
        })
    }

    pub fn config(&self) -> &PartitionConfig {
        &self.cfg
    }

    /// Calls `f` for every in-bounds block of `payload`, in payload order.
    pub fn for_each_block<'a>(&mut self, payload: &'a [u8], mut f: impl FnMut(Block<'a>)) {
        self.hasher.hashes_into(payload, &mut self.hashes);
        winnow_into(&self.hashes, self.cfg.window, &mut self.deque, &mut self.bounds);
        let Some(&last) = self.bounds.last() else {
            return;
        };
        let (lo, hi) = (self.cfg.min_block_len(), self.cfg.max_block_len());
        let o = self.cfg.overlap;
        let threshold = self.cfg.threshold;
        let mut emit = |start: usize, end: usize, kind: BlockKind| {
            let len = end - start;
            if (lo..=hi).contains(&len) {
                f(Block { bytes: &payload[start..end], start, kind, kept: len >= threshold });
            }
        };

        emit(0, self.bounds[0] + 1, BlockKind::Leading);
        for pair in self.bounds.windows(2) {
            let (prev, cur) = (pair[0], pair[1]);
            if prev >= o {
                emit(prev - o, cur + 1, BlockKind::Interior);
            } else {
                emit(0, cur + 1, BlockKind::Leading);
            }
        }
        if last + 1 < payload.len() {
            emit(last.saturating_sub(o), payload.len(), BlockKind::Trailing);
        }
    }

    pub fn partition<'a>(&mut self, payload: &'a [u8]) -> Partition<'a> {
        let mut blocks = Vec::new();
        self.for_each_block(payload, |b| blocks.push(b));
        Partition { blocks }
    }
}

/// Partitions `payload` into in-bounds shingled blocks, labelled against the
/// configured threshold.
pub fn partition_payload<'a>(
    payload: &'a [u8],
    cfg: &PartitionConfig,
) -> Result<Partition<'a>, ConfigError> {
    Ok(Partitioner::new(*cfg)?.partition(payload))
}

/// Keeps blocks of at least `threshold` bytes, preserving order.
pub fn downsample(blocks: Vec<Block<'_>>, threshold: usize) -> Downsampled<'_> {
    let had_any = !blocks.is_empty();
    let kept: Vec<_> = blocks
        .into_iter()
        .filter(|b| b.len() >= threshold)
        .map(|b| Block { kept: true, ..b })
        .collect();
    let all_discarded = had_any && kept.is_empty();
    Downsampled { kept, all_discarded }
}
