//! Digest generation: packets in, finalized per-interval segments out.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::bloom::{MultiSectionBloomFilter, DEFAULT_HASHES};
use crate::codec::TableCodec;
use crate::error::{ConfigError, DigestError};
use crate::flow::{FlowKey, PacketRecord};
use crate::index::{compress_table, BitmapIndexTable, FlowList, LazyTable};
use crate::partition::{PartitionConfig, Partitioner};

pub const TYPE1_TAG: u8 = 0x01;
pub const TYPE2_V4_TAG: u8 = 0x02;
pub const TYPE2_V6_TAG: u8 = 0x03;

pub const DEFAULT_FILTER_SEED: u64 = 0xcb1d_f11e_0000_0002;
pub const DEFAULT_SECTION_SEED: u64 = 0xcb1d_5ec7_0000_0003;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct DigestConfig {
    pub partition: PartitionConfig,
    pub sections: usize,
    pub hashes: u32,
    /// Raw bytes per filter byte.
    pub target_dr: f64,
    /// Rotate once the most loaded section reaches this false-positive estimate.
    pub rotation_fp: f64,
    /// Raw payload bytes per interval; also sizes the filter.
    pub interval_raw_budget: u64,
    /// Apply the threshold to type-II insertions as well.
    pub downsample_type2: bool,
    pub filter_seed: u64,
    pub section_seed: u64,
}

impl Default for DigestConfig {
    fn default() -> Self {
        Self {
            partition: PartitionConfig::default(),
            sections: 2048,
            hashes: DEFAULT_HASHES,
            target_dr: 100.0,
            rotation_fp: 0.01,
            interval_raw_budget: 1 << 30,
            downsample_type2: true,
            filter_seed: DEFAULT_FILTER_SEED,
            section_seed: DEFAULT_SECTION_SEED,
        }
    }
}

impl DigestConfig {
    /// Filter size: `8 * interval_raw_budget / target_dr` bits.
    pub fn total_bits(&self) -> u64 {
        (8.0 * self.interval_raw_budget as f64 / self.target_dr) as u64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.partition.validate()?;
        if !self.target_dr.is_finite() || self.target_dr <= 1.0 {
            return Err(ConfigError::TargetDr(self.target_dr));
        }
        if !(self.rotation_fp > 0.0 && self.rotation_fp < 1.0) {
            return Err(ConfigError::RotationFp(self.rotation_fp));
        }
        if self.hashes == 0 {
            return Err(ConfigError::Bloom { m: self.total_bits(), k: 0 });
        }
        let bits = self.total_bits();
        if self.sections == 0 || bits < self.sections as u64 * 64 {
            return Err(ConfigError::Sections { total_bits: bits, sections: self.sections });
        }
        Ok(())
    }

    fn new_filter(&self) -> Result<MultiSectionBloomFilter, ConfigError> {
        MultiSectionBloomFilter::new(
            self.total_bits(),
            self.sections,
            self.hashes,
            self.section_seed,
            self.filter_seed,
        )
    }

    /// Whether a block of `len` bytes gets a type-II insertion.
    pub fn inserts_type2(&self, len: usize) -> bool {
        !self.downsample_type2 || len >= self.partition.threshold
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SegmentCounters {
    pub raw_bytes: u64,
    pub blocks_total: u64,
    pub blocks_kept: u64,
    pub packets: u64,
}

impl SegmentCounters {
    /// Block reduction factor `blocks_total / blocks_kept`.
    pub fn reduction_factor(&self) -> Option<f64> {
        (self.blocks_kept > 0).then(|| self.blocks_total as f64 / self.blocks_kept as f64)
    }

    pub fn add(&mut self, other: &SegmentCounters) {
        self.raw_bytes += other.raw_bytes;
        self.blocks_total += other.blocks_total;
        self.blocks_kept += other.blocks_kept;
        self.packets += other.packets;
    }
}

pub fn type1_into(block: &[u8], out: &mut Vec<u8>) {
    out.clear();
    out.push(TYPE1_TAG);
    out.extend_from_slice(block);
}

pub fn type2_into(block: &[u8], flow: &FlowKey, out: &mut Vec<u8>) {
    out.clear();
    out.push(if flow.is_ipv4() { TYPE2_V4_TAG } else { TYPE2_V6_TAG });
    out.extend_from_slice(block);
    flow.encode_into(out);
}

/// `tag | block | flow`, the flow-determination element for a block.
pub fn make_type2(block: &[u8], flow: &FlowKey) -> Vec<u8> {
    let mut v = Vec::with_capacity(1 + block.len() + flow.encoded_len());
    type2_into(block, flow, &mut v);
    v
}

/// One finalized interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveSegment {
    pub start_us: u64,
    pub end_us: u64,
    pub msbf: MultiSectionBloomFilter,
    pub flows: FlowList,
    pub table: LazyTable,
    pub cfg: DigestConfig,
    pub counters: SegmentCounters,
}

impl ArchiveSegment {
    /// Filter bytes plus compressed table bytes.
    pub fn digest_bytes(&self) -> u64 {
        self.msbf.byte_len() + self.table.stored().bytes.len() as u64
    }

    pub fn achieved_dr(&self) -> Option<f64> {
        let d = self.digest_bytes();
        (d > 0).then(|| self.counters.raw_bytes as f64 / d as f64)
    }

    pub fn overlaps(&self, from_us: Option<u64>, to_us: Option<u64>) -> bool {
        from_us.is_none_or(|f| self.end_us >= f) && to_us.is_none_or(|t| self.start_us <= t)
    }
}

struct OpenSegment {
    start_us: u64,
    end_us: u64,
    msbf: MultiSectionBloomFilter,
    flows: FlowList,
    table: BitmapIndexTable,
    counters: SegmentCounters,
}

impl OpenSegment {
    fn new(cfg: &DigestConfig) -> Result<Self, ConfigError> {
        Ok(Self {
            start_us: 0,
            end_us: 0,
            msbf: cfg.new_filter()?,
            flows: FlowList::new(),
            table: BitmapIndexTable::new(cfg.sections),
            counters: SegmentCounters::default(),
        })
    }
}

/// Single-writer digest pipeline for one ordered packet stream.
pub struct Digester {
    cfg: DigestConfig,
    codec: Arc<dyn TableCodec>,
    partitioner: Partitioner,
    open: OpenSegment,
    last_ts: Option<u64>,
    element: Vec<u8>,
}

impl Digester {
    pub fn new(cfg: DigestConfig, codec: Arc<dyn TableCodec>) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(Self {
            partitioner: Partitioner::new(cfg.partition)?,
            open: OpenSegment::new(&cfg)?,
            cfg,
            codec,
            last_ts: None,
            element: Vec::with_capacity(128),
        })
    }

    pub fn config(&self) -> &DigestConfig {
        &self.cfg
    }

    /// Counters of the interval currently being filled.
    pub fn open_counters(&self) -> &SegmentCounters {
        &self.open.counters
    }

    pub fn open_filter(&self) -> &MultiSectionBloomFilter {
        &self.open.msbf
    }

    /// Digests one packet. Returns the segment closed by this packet, if any.
    pub fn push(&mut self, pkt: &PacketRecord) -> Result<Option<ArchiveSegment>, DigestError> {
        if let Some(prev) = self.last_ts {
            if pkt.timestamp_us < prev {
                return Err(DigestError::Ordering { previous: prev, current: pkt.timestamp_us });
            }
        }
        self.last_ts = Some(pkt.timestamp_us);
        self.digest_packet(pkt);
        Ok(self.maybe_rotate())
    }

    fn digest_packet(&mut self, pkt: &PacketRecord) {
        let cfg = &self.cfg;
        let open = &mut self.open;
        if open.counters.packets == 0 {
            open.start_us = pkt.timestamp_us;
        }
        open.end_us = pkt.timestamp_us;
        open.counters.packets += 1;
        open.counters.raw_bytes += pkt.payload.len() as u64;

        let (row, new) = open.flows.register(pkt.flow);
        if new {
            open.table.push_row();
        }
        let element = &mut self.element;
        // Elements already present set no new bits; skipping them keeps
        // repeated content (zero runs) from inflating the section load that
        // drives rotation. The bit array is the same either way.
        self.partitioner.for_each_block(&pkt.payload, |b| {
            open.counters.blocks_total += 1;
            if b.kept {
                open.counters.blocks_kept += 1;
                type1_into(b.bytes, element);
                let section = match open.msbf.query(element) {
                    Some(s) => s,
                    None => open.msbf.insert(element),
                };
                open.table
                    .set(row as usize, section)
                    .expect("row registered and section below j");
            }
            if cfg.inserts_type2(b.len()) {
                type2_into(b.bytes, &pkt.flow, element);
                if open.msbf.query(element).is_none() {
                    open.msbf.insert(element);
                }
            }
        });
    }

    fn should_rotate(&self) -> bool {
        let c = &self.open.counters;
        c.packets > 0
            && (c.raw_bytes >= self.cfg.interval_raw_budget
                || self.open.msbf.worst_section_fp() >= self.cfg.rotation_fp)
    }

    /// Closes the open interval if either rotation rule fires.
    pub fn maybe_rotate(&mut self) -> Option<ArchiveSegment> {
        self.should_rotate().then(|| self.rotate())
    }

    fn rotate(&mut self) -> ArchiveSegment {
        let fresh = OpenSegment::new(&self.cfg).expect("config validated at construction");
        let done = core::mem::replace(&mut self.open, fresh);
        self.finalize(done)
    }

    fn finalize(&self, seg: OpenSegment) -> ArchiveSegment {
        let stored = compress_table(&seg.table, self.codec.as_ref());
        ArchiveSegment {
            start_us: seg.start_us,
            end_us: seg.end_us,
            msbf: seg.msbf,
            flows: seg.flows,
            table: LazyTable::new(stored, self.codec.clone()),
            cfg: self.cfg,
            counters: seg.counters,
        }
    }

    /// Closes the last interval. `None` when it never received a packet.
    pub fn finish(mut self) -> Option<ArchiveSegment> {
        if self.open.counters.packets == 0 {
            return None;
        }
        let open = core::mem::replace(&mut self.open, OpenSegment::new(&self.cfg).ok()?);
        Some(self.finalize(open))
    }
}

/// Digests an ordered packet stream into segments.
pub fn digest_stream<'a, I>(
    packets: I,
    cfg: DigestConfig,
    codec: Arc<dyn TableCodec>,
) -> Result<Vec<ArchiveSegment>, DigestError>
where
    I: IntoIterator<Item = &'a PacketRecord>,
{
    let mut d = Digester::new(cfg, codec)?;
    let mut out = Vec::new();
    for p in packets {
        out.extend(d.push(p)?);
    }
    out.extend(d.finish());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::DeflateCodec;
    use crate::flow::Protocol;
    use crate::partition::partition_payload;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn codec() -> Arc<dyn TableCodec> {
        Arc::new(DeflateCodec::default())
    }

    fn flow(i: u8) -> FlowKey {
        FlowKey::v4([10, 0, 0, i], [10, 0, 1, 1], 4000 + i as u16, 443, Protocol::Tcp)
    }

    fn random(n: usize, seed: u64) -> Vec<u8> {
        let mut v = vec![0; n];
        ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut v);
        v
    }

    fn pkt(f: u8, payload: Vec<u8>, ts: u64) -> PacketRecord {
        PacketRecord { flow: flow(f), payload, timestamp_us: ts }
    }

    fn small_cfg() -> DigestConfig {
        DigestConfig { sections: 16, interval_raw_budget: 1 << 20, ..Default::default() }
    }

    #[test]
    fn type2_layout() {
        let f = flow(1);
        let a = make_type2(b"abcdefgh", &f);
        assert_eq!(a, make_type2(b"abcdefgh", &f));
        assert_ne!(a, make_type2(b"abcdefgh", &flow(2)));
        assert_eq!(a.len(), 1 + 8 + f.encoded_len());
        assert_eq!(a[0], TYPE2_V4_TAG);
        let mut t1 = Vec::new();
        type1_into(b"abcdefgh", &mut t1);
        assert_ne!(t1[..9], a[..9]);
    }

    #[test]
    fn config_validation() {
        assert!(DigestConfig::default().validate().is_ok());
        let bad = [
            DigestConfig { target_dr: 1.0, ..Default::default() },
            DigestConfig { rotation_fp: 0.0, ..Default::default() },
            DigestConfig { rotation_fp: 1.0, ..Default::default() },
            DigestConfig { interval_raw_budget: 1000, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        let c = DigestConfig { interval_raw_budget: 1_000_000, target_dr: 100.0, ..Default::default() };
        assert_eq!(c.total_bits(), 80_000);
    }

    #[test]
    fn empty_payload_registers_flow_only() {
        let mut d = Digester::new(small_cfg(), codec()).unwrap();
        d.push(&pkt(1, Vec::new(), 0)).unwrap();
        assert_eq!(d.open_filter().popcount(), 0);
        let seg = d.finish().unwrap();
        assert_eq!(seg.flows.len(), 1);
        assert_eq!(seg.table.table().unwrap().ones(), 0);
        assert_eq!(seg.counters.blocks_total, 0);
    }

    #[test]
    fn empty_stream_gives_no_segments() {
        let segs = digest_stream(&[], small_cfg(), codec()).unwrap();
        assert!(segs.is_empty());
    }

    #[test]
    fn decreasing_timestamps_are_fatal() {
        let mut d = Digester::new(small_cfg(), codec()).unwrap();
        d.push(&pkt(1, random(100, 1), 10)).unwrap();
        d.push(&pkt(1, random(100, 2), 10)).unwrap();
        assert!(matches!(
            d.push(&pkt(1, random(100, 3), 9)),
            Err(DigestError::Ordering { previous: 10, current: 9 })
        ));
    }

    #[test]
    fn row_popcount_bounded_by_kept_blocks() {
        let cfg = small_cfg();
        let payload = random(3000, 7);
        let kept = partition_payload(&payload, &cfg.partition)
            .unwrap()
            .blocks
            .iter()
            .filter(|b| b.kept)
            .count() as u32;
        let segs = digest_stream(&[pkt(1, payload, 0)], cfg, codec()).unwrap();
        let t = segs[0].table.table().unwrap();
        assert!(t.row_ones(0) <= kept);
        assert!(t.row_ones(0) > 0);
        assert_eq!(segs[0].counters.blocks_kept, kept as u64);
        assert_eq!(segs[0].msbf.inserted(), 2 * kept as u64);
    }

    #[test]
    fn fresh_segment_never_rotates() {
        let mut d = Digester::new(small_cfg(), codec()).unwrap();
        assert!(d.maybe_rotate().is_none());
    }

    #[test]
    fn byte_budget_rotation() {
        let cfg = DigestConfig { interval_raw_budget: 64_000, rotation_fp: 0.999, ..small_cfg() };
        let mut d = Digester::new(cfg, codec()).unwrap();
        let mut closed = Vec::new();
        for i in 0..63 {
            closed.extend(d.push(&pkt(1, random(1000, i), i)).unwrap());
        }
        assert!(closed.is_empty());
        let seg = d.push(&pkt(1, random(1000, 99), 63)).unwrap().expect("exactly at budget");
        assert_eq!(seg.counters.raw_bytes, 64_000);
        assert_eq!(seg.counters.packets, 64);
        assert_eq!((seg.start_us, seg.end_us), (0, 63));
        assert_eq!(d.open_counters().packets, 0);
    }

    #[test]
    fn fp_rule_rotates_before_byte_rule() {
        // 8 * 12_800 / 100 = 1024 filter bits for a 12.8 kB interval.
        let cfg = DigestConfig {
            sections: 1,
            interval_raw_budget: 12_800,
            rotation_fp: 0.01,
            ..Default::default()
        };
        assert_eq!(cfg.total_bits(), 1 << 10);
        let mut d = Digester::new(cfg, codec()).unwrap();
        let mut ts = 0;
        let seg = loop {
            if let Some(s) = d.push(&pkt(1, random(200, ts), ts)).unwrap() {
                break s;
            }
            ts += 1;
        };
        assert!(seg.counters.raw_bytes < cfg.interval_raw_budget);
        let m = seg.msbf.section_bits();
        let fp = crate::bloom::expected_fp(m, seg.msbf.max_section_load(), cfg.hashes);
        assert!(fp >= cfg.rotation_fp, "{fp}");
    }

    #[test]
    fn digesting_is_deterministic() {
        let pkts: Vec<_> = (0..50).map(|i| pkt((i % 5) as u8, random(900, i), i)).collect();
        let a = digest_stream(&pkts, small_cfg(), codec()).unwrap();
        let b = digest_stream(&pkts, small_cfg(), codec()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].table.stored(), b[0].table.stored());
    }

    #[test]
    fn raising_threshold_never_adds_load() {
        let pkts: Vec<_> = (0..40).map(|i| pkt((i % 4) as u8, random(1500, i), i)).collect();
        let mut last: Option<(u64, u64, u64)> = None;
        for t in [0, 10, 20, 40, 60, 70] {
            let mut cfg = small_cfg();
            cfg.partition.threshold = t;
            let seg = &digest_stream(&pkts, cfg, codec()).unwrap()[0];
            let now = (seg.counters.blocks_kept, seg.msbf.inserted(), seg.table.table().unwrap().ones());
            if let Some(prev) = last {
                assert!(now.0 <= prev.0 && now.1 <= prev.1 && now.2 <= prev.2, "T={t}");
            }
            last = Some(now);
        }
        assert_eq!(last.unwrap(), (0, 0, 0));
    }

    #[test]
    fn type2_without_downsampling() {
        let cfg = DigestConfig { downsample_type2: false, ..small_cfg() };
        let payload = random(2000, 3);
        let p = partition_payload(&payload, &cfg.partition).unwrap();
        let kept = p.blocks.iter().filter(|b| b.kept).count() as u64;
        let seg = &digest_stream(&[pkt(1, payload.clone(), 0)], cfg, codec()).unwrap()[0];
        assert_eq!(seg.msbf.inserted(), kept + p.blocks.len() as u64);
        for b in &p.blocks {
            assert!(seg.msbf.query(&make_type2(b.bytes, &flow(1))).is_some());
        }
    }
}
