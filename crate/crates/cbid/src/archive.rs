//! The CBID archive file: a header, a segment directory and the encoded
//! segments, all little-endian. See `docs/archive-format.md` for the layout.

use std::fs;
use std::path::{Path, PathBuf};

use cbid_core::bloom::MultiSectionBloomFilter;
use cbid_core::codec::CodecId;
use cbid_core::index::{CompressedTable, FlowList, LazyTable};
use cbid_core::partition::PartitionConfig;
use cbid_core::{ArchiveSegment, DigestConfig, FlowKey, SegmentCounters};
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::codec::codec_for;

pub const MAGIC: &[u8; 4] = b"CBID";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;
pub const DIR_ENTRY_LEN: usize = 24;
const CHECKSUM_SEED: u64 = 0xcb1d_a7c4_0000_0001;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad magic {0:02x?}, not a CBID archive")]
    Magic([u8; 4]),
    #[error("unsupported archive version {0} (this build reads {VERSION})")]
    Version(u16),
    #[error("unknown archive flags {0:#06x}")]
    Flags(u16),
    #[error("archive truncated: {0}")]
    Truncated(&'static str),
    #[error("header or segment directory checksum mismatch")]
    HeaderChecksum,
    #[error("segment {segment}: checksum mismatch")]
    Checksum { segment: usize },
    #[error("segment {segment}: {reason}")]
    Segment { segment: usize, reason: String },
}

pub fn checksum(bytes: &[u8]) -> u64 {
    xxh3_64_with_seed(bytes, CHECKSUM_SEED)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, v: &[u8]) {
        self.0.extend_from_slice(v);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("unexpected end of segment")?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

const KIND_U64: u8 = 0;
const KIND_F64: u8 = 1;
const KIND_BOOL: u8 = 2;

fn cfg_entries(c: &DigestConfig) -> Vec<(&'static str, u8, u64)> {
    let p = &c.partition;
    vec![
        ("window", KIND_U64, p.window as u64),
        ("overlap", KIND_U64, p.overlap as u64),
        ("qgram", KIND_U64, p.qgram as u64),
        ("threshold", KIND_U64, p.threshold as u64),
        ("hash_seed", KIND_U64, p.hash_seed),
        ("sections", KIND_U64, c.sections as u64),
        ("hashes", KIND_U64, c.hashes as u64),
        ("target_dr", KIND_F64, c.target_dr.to_bits()),
        ("rotation_fp", KIND_F64, c.rotation_fp.to_bits()),
        ("interval_raw_budget", KIND_U64, c.interval_raw_budget),
        ("downsample_type2", KIND_BOOL, c.downsample_type2 as u64),
        ("filter_seed", KIND_U64, c.filter_seed),
        ("section_seed", KIND_U64, c.section_seed),
    ]
}

fn decode_cfg(r: &mut Reader<'_>) -> Result<DigestConfig, String> {
    let n = r.u32()?;
    let mut seen = std::collections::BTreeMap::new();
    for _ in 0..n {
        let klen = r.u8()? as usize;
        let key = std::str::from_utf8(r.take(klen)?).map_err(|_| "config key is not UTF-8")?.to_owned();
        let kind = r.u8()?;
        let val = r.u64()?;
        seen.insert(key, (kind, val));
    }
    let get = |k: &str, kind: u8| -> Result<u64, String> {
        match seen.get(k) {
            Some(&(got, v)) if got == kind => Ok(v),
            Some(_) => Err(format!("config key {k} has the wrong type")),
            None => Err(format!("config key {k} missing")),
        }
    };
    let usize_of = |k: &str| -> Result<usize, String> {
        usize::try_from(get(k, KIND_U64)?).map_err(|_| format!("config key {k} out of range"))
    };
    let cfg = DigestConfig {
        partition: PartitionConfig {
            window: usize_of("window")?,
            overlap: usize_of("overlap")?,
            qgram: usize_of("qgram")?,
            threshold: usize_of("threshold")?,
            hash_seed: get("hash_seed", KIND_U64)?,
        },
        sections: usize_of("sections")?,
        hashes: u32::try_from(get("hashes", KIND_U64)?).map_err(|_| "hashes out of range")?,
        target_dr: f64::from_bits(get("target_dr", KIND_F64)?),
        rotation_fp: f64::from_bits(get("rotation_fp", KIND_F64)?),
        interval_raw_budget: get("interval_raw_budget", KIND_U64)?,
        downsample_type2: get("downsample_type2", KIND_BOOL)? != 0,
        filter_seed: get("filter_seed", KIND_U64)?,
        section_seed: get("section_seed", KIND_U64)?,
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

pub fn encode_segment(seg: &ArchiveSegment) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(seg.msbf.byte_len() as usize + 4096));
    w.u64(seg.start_us);
    w.u64(seg.end_us);

    let entries = cfg_entries(&seg.cfg);
    w.u32(entries.len() as u32);
    for (k, kind, v) in entries {
        w.u8(k.len() as u8);
        w.bytes(k.as_bytes());
        w.u8(kind);
        w.u64(v);
    }

    w.u32(seg.flows.len() as u32);
    for f in seg.flows.iter() {
        f.encode_into(&mut w.0);
    }

    let m = &seg.msbf;
    w.u32(m.sections() as u32);
    w.u32(m.hashes());
    w.u64(m.section_bits());
    w.u64(m.section_seed());
    w.u64(m.seed());
    for &n in m.section_inserted() {
        w.u64(n);
    }
    for &word in m.words() {
        w.u64(word);
    }

    let t = seg.table.stored();
    w.u8(t.codec.0);
    w.u32(t.rows as u32);
    w.u32(t.columns as u32);
    w.u64(t.bytes.len() as u64);
    w.bytes(&t.bytes);

    let c = &seg.counters;
    for v in [c.raw_bytes, c.blocks_total, c.blocks_kept, c.packets] {
        w.u64(v);
    }
    w.0
}

pub fn decode_segment(bytes: &[u8], segment: usize) -> Result<ArchiveSegment, ArchiveError> {
    let err = |reason: String| ArchiveError::Segment { segment, reason };
    let mut r = Reader { buf: bytes, at: 0 };
    let start_us = r.u64().map_err(err)?;
    let end_us = r.u64().map_err(err)?;
    let cfg = decode_cfg(&mut r).map_err(err)?;

    let nflows = r.u32().map_err(err)? as usize;
    let mut flows = FlowList::new();
    for _ in 0..nflows {
        let (key, used) = FlowKey::decode(&r.buf[r.at..]).map_err(|e| err(e.to_string()))?;
        r.at += used;
        if !flows.register(key).1 {
            return Err(err("duplicate flow in flow list".into()));
        }
    }

    let sections = r.u32().map_err(err)? as usize;
    let hashes = r.u32().map_err(err)?;
    let section_bits = r.u64().map_err(err)?;
    let section_seed = r.u64().map_err(err)?;
    let seed = r.u64().map_err(err)?;
    let words_len = section_bits
        .checked_mul(sections as u64)
        .map(|b| b / 64)
        .filter(|&w| w * 8 <= bytes.len() as u64)
        .ok_or_else(|| err("filter larger than segment".into()))? as usize;
    if sections > bytes.len() / 8 {
        return Err(err("section count larger than segment".into()));
    }
    let section_inserted = (0..sections).map(|_| r.u64()).collect::<Result<Vec<_>, _>>().map_err(err)?;
    let words = (0..words_len).map(|_| r.u64()).collect::<Result<Vec<_>, _>>().map_err(err)?;
    let msbf = MultiSectionBloomFilter::from_parts(sections, section_bits, hashes, section_seed, seed, section_inserted, words)
        .map_err(|e| err(e.to_string()))?;
    if sections != cfg.sections || hashes != cfg.hashes {
        return Err(err("filter shape disagrees with the stored configuration".into()));
    }

    let codec_id = CodecId(r.u8().map_err(err)?);
    let rows = r.u32().map_err(err)? as usize;
    let columns = r.u32().map_err(err)? as usize;
    let zlen = r.u64().map_err(err)?;
    let zbytes = r.take(usize::try_from(zlen).unwrap_or(usize::MAX)).map_err(err)?.to_vec();
    if rows != flows.len() || columns != sections {
        return Err(err("index table shape disagrees with flow list or filter".into()));
    }
    let codec = codec_for(codec_id).ok_or_else(|| err(format!("unknown table codec {}", codec_id.0)))?;
    let table = LazyTable::new(CompressedTable { codec: codec_id, rows, columns, bytes: zbytes }, codec);

    let mut c = [0u64; 4];
    for v in &mut c {
        *v = r.u64().map_err(err)?;
    }
    if r.at != bytes.len() {
        return Err(err("trailing bytes after segment".into()));
    }
    let counters = SegmentCounters { raw_bytes: c[0], blocks_total: c[1], blocks_kept: c[2], packets: c[3] };
    Ok(ArchiveSegment { start_us, end_us, msbf, flows, table, cfg, counters })
}

pub fn encode_archive(segments: &[ArchiveSegment]) -> Vec<u8> {
    let bodies: Vec<Vec<u8>> = segments.iter().map(encode_segment).collect();
    let mut w = Writer(Vec::new());
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.u16(0);
    w.u32(segments.len() as u32);
    w.u32(0);
    w.u64(0); // header checksum, patched below
    let mut offset = (HEADER_LEN + DIR_ENTRY_LEN * bodies.len()) as u64;
    for b in &bodies {
        w.u64(offset);
        w.u64(b.len() as u64);
        w.u64(checksum(b));
        offset += b.len() as u64;
    }
    let dir_end = w.0.len();
    let mut covered = w.0[..16].to_vec();
    covered.extend_from_slice(&w.0[HEADER_LEN..dir_end]);
    let sum = checksum(&covered);
    w.0[16..24].copy_from_slice(&sum.to_le_bytes());
    for b in &bodies {
        w.bytes(b);
    }
    w.0
}

pub fn decode_archive(bytes: &[u8]) -> Result<Vec<ArchiveSegment>, ArchiveError> {
    if bytes.len() < 4 {
        return Err(ArchiveError::Truncated("header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(ArchiveError::Magic(bytes[..4].try_into().unwrap()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(ArchiveError::Truncated("header"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(ArchiveError::Version(version));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dir_end = count
        .checked_mul(DIR_ENTRY_LEN)
        .and_then(|d| d.checked_add(HEADER_LEN))
        .filter(|&e| e <= bytes.len())
        .ok_or(ArchiveError::Truncated("segment directory"))?;
    let mut covered = bytes[..16].to_vec();
    covered.extend_from_slice(&bytes[HEADER_LEN..dir_end]);
    if checksum(&covered) != u64::from_le_bytes(bytes[16..24].try_into().unwrap()) {
        return Err(ArchiveError::HeaderChecksum);
    }
    let flags = u16::from_le_bytes([bytes[6], bytes[7]]);
    if flags != 0 {
        return Err(ArchiveError::Flags(flags));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let e = &bytes[HEADER_LEN + i * DIR_ENTRY_LEN..HEADER_LEN + (i + 1) * DIR_ENTRY_LEN];
        let off = u64::from_le_bytes(e[..8].try_into().unwrap());
        let len = u64::from_le_bytes(e[8..16].try_into().unwrap());
        let sum = u64::from_le_bytes(e[16..24].try_into().unwrap());
        let body = off
            .checked_add(len)
            .filter(|&end| end <= bytes.len() as u64)
            .map(|end| &bytes[off as usize..end as usize])
            .ok_or(ArchiveError::Truncated("segment body"))?;
        if checksum(body) != sum {
            return Err(ArchiveError::Checksum { segment: i });
        }
        out.push(decode_segment(body, i)?);
    }
    Ok(out)
}

/// Writes the archive; on failure no partial file is left behind.
pub fn write_archive(segments: &[ArchiveSegment], path: impl AsRef<Path>) -> Result<(), ArchiveError> {
    let path = path.as_ref();
    let bytes = encode_archive(segments);
    fs::write(path, &bytes).map_err(|source| {
        let _ = fs::remove_file(path);
        ArchiveError::Io { path: path.to_path_buf(), source }
    })
}

/// Reads and verifies an archive. Index tables stay compressed until a query needs them.
pub fn read_archive(path: impl AsRef<Path>) -> Result<Vec<ArchiveSegment>, ArchiveError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ArchiveError::Io { path: path.to_path_buf(), source })?;
    decode_archive(&bytes)
}
