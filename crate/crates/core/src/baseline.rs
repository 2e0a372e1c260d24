//! Reference scheme for comparisons: the same partitioner and hash family,
//! a single conventional Bloom filter, every block inserted (no threshold),
//! no index table, and every flow queried.

use alloc::vec::Vec;

use crate::bloom::{BloomFilter, DEFAULT_HASHES};
use crate::digest::{type1_into, type2_into, SegmentCounters, DEFAULT_FILTER_SEED};
use crate::error::ConfigError;
use crate::flow::{FlowKey, PacketRecord};
use crate::index::FlowList;
use crate::partition::{PartitionConfig, Partitioner};
use crate::query::{excerpt_blocks, FlowDetermination};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BaselineConfig {
    /// The threshold field is ignored; every block is inserted.
    pub partition: PartitionConfig,
    pub filter_bits: u64,
    pub hashes: u32,
    pub seed: u64,
}

impl BaselineConfig {
    pub fn new(partition: PartitionConfig, filter_bits: u64) -> Self {
        Self { partition: partition.with_threshold(0), filter_bits, hashes: DEFAULT_HASHES, seed: DEFAULT_FILTER_SEED }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BaselineAnswer {
    pub matched: bool,
    pub determination: FlowDetermination,
}

/// Digest of one stream under the reference scheme.
#[derive(Clone)]
pub struct BaselineDigest {
    cfg: BaselineConfig,
    partitioner: Partitioner,
    filter: BloomFilter,
    flows: FlowList,
    counters: SegmentCounters,
    element: Vec<u8>,
}

impl BaselineDigest {
    pub fn new(mut cfg: BaselineConfig) -> Result<Self, ConfigError> {
        cfg.partition.threshold = 0;
        Ok(Self {
            partitioner: Partitioner::new(cfg.partition)?,
            filter: BloomFilter::new(cfg.filter_bits, cfg.hashes, cfg.seed)?,
            flows: FlowList::new(),
            counters: SegmentCounters::default(),
            element: Vec::with_capacity(128),
            cfg,
        })
    }

    pub fn push(&mut self, pkt: &PacketRecord) {
        self.flows.register(pkt.flow);
        self.counters.packets += 1;
        self.counters.raw_bytes += pkt.payload.len() as u64;
        let (filter, counters, element) = (&mut self.filter, &mut self.counters, &mut self.element);
        self.partitioner.for_each_block(&pkt.payload, |b| {
            counters.blocks_total += 1;
            counters.blocks_kept += 1;
            type1_into(b.bytes, element);
            filter.insert(element);
            type2_into(b.bytes, &pkt.flow, element);
            filter.insert(element);
        });
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.cfg
    }
    pub fn filter(&self) -> &BloomFilter {
        &self.filter
    }
    pub fn flows(&self) -> &FlowList {
        &self.flows
    }
    pub fn counters(&self) -> &SegmentCounters {
        &self.counters
    }

    pub fn achieved_dr(&self) -> f64 {
        self.counters.raw_bytes as f64 / self.filter.byte_len() as f64
    }

    /// Appearance check, then type-II queries against every flow.
    pub fn query(&self, excerpt: &[u8]) -> BaselineAnswer {
        let blocks = excerpt_blocks(excerpt, &self.cfg.partition);
        let mut element = Vec::with_capacity(128);
        for b in &blocks {
            type1_into(b.bytes, &mut element);
            if !self.filter.contains(&element) {
                return BaselineAnswer::default();
            }
        }
        let mut det = FlowDetermination { candidates: self.flows.len(), ..Default::default() };
        for flow in self.flows.iter() {
            if self.confirms(&blocks, flow, &mut element, &mut det.type2_queries) {
                det.flows.push((*flow, blocks.len() as u32));
            }
        }
        BaselineAnswer { matched: true, determination: det }
    }

    fn confirms(
        &self,
        blocks: &[crate::partition::Block<'_>],
        flow: &FlowKey,
        element: &mut Vec<u8>,
        queries: &mut u64,
    ) -> bool {
        blocks.iter().all(|b| {
            *queries += 1;
            type2_into(b.bytes, flow, element);
            self.filter.contains(element)
        })
    }
}

pub fn digest_baseline<'a, I>(packets: I, cfg: BaselineConfig) -> Result<BaselineDigest, ConfigError>
where
    I: IntoIterator<Item = &'a PacketRecord>,
{
    let mut d = BaselineDigest::new(cfg)?;
    for p in packets {
        d.push(p);
    }
    Ok(d)
}
