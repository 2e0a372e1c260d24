//! Traffic digesting and payload attribution.
//!
//! Packet payloads are cut into content-defined, overlapping blocks
//! ([`partition`]), small blocks are dropped, and the rest go into a
//! per-interval [`bloom::MultiSectionBloomFilter`] twice: once as-is
//! (appearance check) and once combined with the flow identifier (flow
//! determination). Every flow also gets a row in a [`index::BitmapIndexTable`]
//! recording which filter sections received its blocks, which lets a query
//! skip most flows before touching the filter.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, capture
//! parsing and the LZMA codec live in the `cbid` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod baseline;
pub mod bloom;
pub mod codec;
pub mod digest;
pub mod error;
pub mod excerpt;
pub mod flow;
pub mod hash;
pub mod index;
pub mod metrics;
pub mod partition;
pub mod query;
pub mod synth;

pub use bloom::{expected_fp, BloomFilter, MultiSectionBloomFilter};
pub use codec::{CodecId, TableCodec};
pub use digest::{digest_stream, make_type2, ArchiveSegment, DigestConfig, Digester, SegmentCounters};
pub use baseline::{BaselineConfig, BaselineDigest};
pub use error::{ConfigError, DigestError};
pub use excerpt::{extract_unique_excerpts, Excerpt, ExcerptSet};
pub use metrics::{dr_overall, Ratio};
pub use flow::{FlowKey, PacketRecord, Protocol};
pub use index::{candidate_flows, table_stats, BitmapIndexTable, FlowList, LazyTable, TableStats};
pub use partition::{Block, BlockKind, PartitionConfig};
pub use query::{investigate, investigate_with, AttributionReport, ExcerptQuery, QueryOptions};
pub use synth::{synth_generate, SynthConfig};
