//! Investigation: appearance check per segment, then flow determination
//! over the flows the index table could not rule out.

use alloc::vec::Vec;

use thiserror::Error;

use crate::digest::{type1_into, type2_into, ArchiveSegment};
use crate::flow::FlowKey;
use crate::index::{candidate_flows, IndexError};
use crate::partition::{Block, BlockKind, PartitionConfig, Partitioner};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("segment {segment}: index table unreadable: {source}")]
    Table { segment: usize, source: IndexError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExcerptQuery<'a> {
    pub bytes: &'a [u8],
    pub from_us: Option<u64>,
    pub to_us: Option<u64>,
}

impl<'a> ExcerptQuery<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, from_us: None, to_us: None }
    }

    pub fn between(mut self, from_us: Option<u64>, to_us: Option<u64>) -> Self {
        self.from_us = from_us;
        self.to_us = to_us;
        self
    }
}

/// Below this many bytes an excerpt often has no kept interior block.
pub fn min_reliable_len(cfg: &PartitionConfig) -> usize {
    2 * cfg.window + cfg.overlap
}

/// Blocks of the excerpt whose boundaries are the same wherever it occurs.
///
/// Only blocks between two consecutive excerpt boundaries, with the full
/// overlap prefix inside the excerpt, qualify. The block from offset 0 and
/// the block after the last boundary depend on bytes outside the excerpt.
pub fn excerpt_blocks<'a>(excerpt: &'a [u8], cfg: &PartitionConfig) -> Vec<Block<'a>> {
    let mut p = match Partitioner::new(*cfg) {
        Ok(p) => p,
        Err(_) => return Vec::new(),
    };
    let mut out = Vec::new();
    p.for_each_block(excerpt, |b| {
        if b.kind == BlockKind::Interior {
            out.push(b);
        }
    });
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Appearance {
    pub matched: bool,
    /// Sorted, distinct sections of the positive kept blocks.
    pub sections: Vec<usize>,
    /// No kept block was available, so the match is assumed.
    pub assumed_positive: bool,
    pub blocks_queried: usize,
}

pub fn appearance_check(blocks: &[Block<'_>], segment: &ArchiveSegment) -> Appearance {
    let mut element = Vec::with_capacity(80);
    let mut sections = Vec::new();
    let mut queried = 0;
    for b in blocks.iter().filter(|b| b.kept) {
        queried += 1;
        type1_into(b.bytes, &mut element);
        match segment.msbf.query(&element) {
            Some(s) => sections.push(s),
            None => {
                return Appearance { matched: false, sections: Vec::new(), assumed_positive: false, blocks_queried: queried }
            }
        }
    }
    sections.sort_unstable();
    sections.dedup();
    Appearance { matched: true, assumed_positive: queried == 0, sections, blocks_queried: queried }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FlowDetermination {
    /// Confirmed flows with the number of type-II elements checked for each.
    pub flows: Vec<(FlowKey, u32)>,
    pub candidates: usize,
    pub type2_queries: u64,
}

/// Confirms candidate flows with type-II queries. With `prune` off the index
/// table is ignored and every flow of the segment is a candidate.
pub fn flow_determination(
    blocks: &[Block<'_>],
    segment: &ArchiveSegment,
    sections: &[usize],
    prune: bool,
) -> Result<FlowDetermination, IndexError> {
    let candidates = if prune {
        candidate_flows(segment.table.table()?, &segment.flows, sections)?
    } else {
        segment.flows.as_slice().to_vec()
    };
    let checked: Vec<&Block<'_>> =
        blocks.iter().filter(|b| segment.cfg.inserts_type2(b.len())).collect();
    let mut element = Vec::with_capacity(128);
    let mut out = FlowDetermination { candidates: candidates.len(), ..Default::default() };
    for flow in candidates {
        let mut ok = true;
        for b in &checked {
            out.type2_queries += 1;
            type2_into(b.bytes, &flow, &mut element);
            if segment.msbf.query(&element).is_none() {
                ok = false;
                break;
            }
        }
        if ok {
            out.flows.push((flow, checked.len() as u32));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentReport {
    /// Position of the segment in the archive.
    pub segment: usize,
    pub start_us: u64,
    pub end_us: u64,
    pub appearance: Appearance,
    pub determination: FlowDetermination,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AttributionReport {
    /// Matched segments only.
    pub segments: Vec<SegmentReport>,
    pub segments_checked: usize,
    pub candidates_examined: u64,
    pub type2_queries: u64,
    /// The excerpt is shorter than [`min_reliable_len`] for some segment.
    pub short_excerpt: bool,
}

impl AttributionReport {
    /// Distinct flows reported by any matched segment, in first-seen order.
    pub fn flows(&self) -> Vec<FlowKey> {
        let mut out: Vec<FlowKey> = Vec::new();
        for s in &self.segments {
            for (f, _) in &s.determination.flows {
                if !out.contains(f) {
                    out.push(*f);
                }
            }
        }
        out
    }

    pub fn reports(&self, flow: &FlowKey) -> bool {
        self.segments.iter().any(|s| s.determination.flows.iter().any(|(f, _)| f == flow))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryOptions {
    pub prune: bool,
}

impl Default for QueryOptions {
    fn default() -> Self {
        Self { prune: true }
    }
}

pub fn investigate(q: &ExcerptQuery<'_>, archive: &[ArchiveSegment]) -> Result<AttributionReport, QueryError> {
    investigate_with(q, archive, QueryOptions::default())
}

pub fn investigate_with(
    q: &ExcerptQuery<'_>,
    archive: &[ArchiveSegment],
    opts: QueryOptions,
) -> Result<AttributionReport, QueryError> {
    let mut report = AttributionReport::default();
    let mut cached: Option<(PartitionConfig, Vec<Block<'_>>)> = None;
    for (i, seg) in archive.iter().enumerate() {
        if !seg.overlaps(q.from_us, q.to_us) {
            continue;
        }
        report.segments_checked += 1;
        let pc = seg.cfg.partition;
        if q.bytes.len() < min_reliable_len(&pc) {
            report.short_excerpt = true;
        }
        if cached.as_ref().is_none_or(|(c, _)| *c != pc) {
            cached = Some((pc, excerpt_blocks(q.bytes, &pc)));
        }
        let blocks = &cached.as_ref().expect("filled above").1;
        let appearance = appearance_check(blocks, seg);
        if !appearance.matched {
            continue;
        }
        let determination = flow_determination(blocks, seg, &appearance.sections, opts.prune)
            .map_err(|source| QueryError::Table { segment: i, source })?;
        report.candidates_examined += determination.candidates as u64;
        report.type2_queries += determination.type2_queries;
        report.segments.push(SegmentReport {
            segment: i,
            start_us: seg.start_us,
            end_us: seg.end_us,
            appearance,
            determination,
        });
    }
    Ok(report)
}
