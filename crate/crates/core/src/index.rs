//! Per-interval flow list and bitmap index table.
//!
//! Each flow seen in an interval owns one row of `columns` bits, one bit per
//! filter section. A bit is set when one of the flow's type-I blocks went into
//! that section. At query time, a flow whose row has a zero in any section an
//! excerpt block was found in cannot have carried the excerpt, so it is never
//! queried.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use once_cell::race::OnceBox;
use thiserror::Error;

use crate::codec::{CodecError, CodecId, TableCodec};
use crate::flow::FlowKey;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IndexError {
    #[error("cell ({row}, {column}) outside a {rows} x {columns} table")]
    OutOfRange { row: usize, column: usize, rows: usize, columns: usize },
    #[error("table of {bytes} bytes holds no complete {symbol}-byte symbol")]
    TooSmall { bytes: usize, symbol: usize },
    #[error("table bytes do not match {rows} rows of {columns} columns")]
    Shape { rows: usize, columns: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Flows of one interval in first-seen order; row ids are dense.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlowList {
    flows: Vec<FlowKey>,
    rows: BTreeMap<FlowKey, u32>,
}

impl FlowList {
    pub fn new() -> Self {
        Self::default()
    }

    /// Row id of `flow`, appending it if unseen. The bool is true for a new flow.
    pub fn register(&mut self, flow: FlowKey) -> (u32, bool) {
        if let Some(&row) = self.rows.get(&flow) {
            return (row, false);
        }
        let row = self.flows.len() as u32;
        self.flows.push(flow);
        self.rows.insert(flow, row);
        (row, true)
    }

    pub fn row_of(&self, flow: &FlowKey) -> Option<u32> {
        self.rows.get(flow).copied()
    }

    pub fn get(&self, row: u32) -> Option<&FlowKey> {
        self.flows.get(row as usize)
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &FlowKey> {
        self.flows.iter()
    }

    pub fn as_slice(&self) -> &[FlowKey] {
        &self.flows
    }
}

impl FromIterator<FlowKey> for FlowList {
    fn from_iter<I: IntoIterator<Item = FlowKey>>(iter: I) -> Self {
        let mut list = FlowList::new();
        for f in iter {
            list.register(f);
        }
        list
    }
}

/// Row-major bit matrix, each row padded to a whole number of bytes.
/// Bit `c` of a row lives in byte `c / 8`, bit position `c % 8`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitmapIndexTable {
    rows: usize,
    columns: usize,
    bits: Vec<u8>,
}

impl BitmapIndexTable {
    pub fn new(columns: usize) -> Self {
        Self { rows: 0, columns, bits: Vec::new() }
    }

    pub fn with_rows(rows: usize, columns: usize) -> Self {
        Self { rows, columns, bits: vec![0; rows * columns.div_ceil(8)] }
    }

    pub fn from_bytes(rows: usize, columns: usize, bits: Vec<u8>) -> Result<Self, IndexError> {
        if bits.len() != rows * columns.div_ceil(8) {
            return Err(IndexError::Shape { rows, columns });
        }
        Ok(Self { rows, columns, bits })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn row_bytes(&self) -> usize {
        self.columns.div_ceil(8)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bits
    }

    /// Appends an all-zero row and returns its id.
    pub fn push_row(&mut self) -> usize {
        self.bits.resize(self.bits.len() + self.row_bytes(), 0);
        self.rows += 1;
        self.rows - 1
    }

    fn check(&self, row: usize, column: usize) -> Result<(), IndexError> {
        if row >= self.rows || column >= self.columns {
            return Err(IndexError::OutOfRange {
                row,
                column,
                rows: self.rows,
                columns: self.columns,
            });
        }
        Ok(())
    }

    pub fn set(&mut self, row: usize, column: usize) -> Result<(), IndexError> {
        self.check(row, column)?;
        let rb = self.row_bytes();
        self.bits[row * rb + column / 8] |= 1 << (column % 8);
        Ok(())
    }

    pub fn get(&self, row: usize, column: usize) -> Result<bool, IndexError> {
        self.check(row, column)?;
        Ok(self.row_has(row, column))
    }

    #[inline]
    fn row_has(&self, row: usize, column: usize) -> bool {
        self.bits[row * self.row_bytes() + column / 8] & (1 << (column % 8)) != 0
    }

    pub fn row(&self, row: usize) -> &[u8] {
        let rb = self.row_bytes();
        &self.bits[row * rb..(row + 1) * rb]
    }

    pub fn row_ones(&self, row: usize) -> u32 {
        self.row(row).iter().map(|b| b.count_ones()).sum()
    }

    pub fn ones(&self) -> u64 {
        self.bits.iter().map(|b| b.count_ones() as u64).sum()
    }

    pub fn ones_fraction(&self) -> f64 {
        let cells = self.rows as u64 * self.columns as u64;
        if cells == 0 {
            0.0
        } else {
            self.ones() as f64 / cells as f64
        }
    }

    /// Rows with a one in every listed column. An empty list matches every row.
    pub fn candidate_rows(&self, columns: &[usize]) -> Result<Vec<u32>, IndexError> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.columns) {
            return Err(IndexError::OutOfRange {
                row: 0,
                column: bad,
                rows: self.rows,
                columns: self.columns,
            });
        }
        Ok((0..self.rows)
            .filter(|&r| columns.iter().all(|&c| self.row_has(r, c)))
            .map(|r| r as u32)
            .collect())
    }
}

/// Flows whose rows have a one in every listed section, in flow-list order.
pub fn candidate_flows(
    table: &BitmapIndexTable,
    flows: &FlowList,
    sections: &[usize],
) -> Result<Vec<FlowKey>, IndexError> {
    Ok(table
        .candidate_rows(sections)?
        .into_iter()
        .filter_map(|r| flows.get(r).copied())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableStats {
    pub ones_fraction: f64,
    /// Shannon entropy, in bits per symbol.
    pub entropy_bits: f64,
    /// `8 * symbol_size / entropy`; infinite for a constant table.
    pub best_ratio: f64,
    pub symbol_size: usize,
}

/// Entropy statistics of the table bytes read as consecutive
/// `symbol_size`-byte symbols. A trailing partial symbol is ignored.
pub fn table_stats(table: &BitmapIndexTable, symbol_size: usize) -> Result<TableStats, IndexError> {
    let bytes = table.as_bytes();
    if symbol_size == 0 || bytes.len() < symbol_size {
        return Err(IndexError::TooSmall { bytes: bytes.len(), symbol: symbol_size });
    }
    let mut hist: BTreeMap<&[u8], u64> = BTreeMap::new();
    let mut total = 0u64;
    for sym in bytes.chunks_exact(symbol_size) {
        *hist.entry(sym).or_insert(0) += 1;
        total += 1;
    }
    let entropy = hist
        .values()
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * libm::log2(p)
        })
        .sum::<f64>()
        .max(0.0);
    let best_ratio = if entropy > 0.0 { 8.0 * symbol_size as f64 / entropy } else { f64::INFINITY };
    Ok(TableStats { ones_fraction: table.ones_fraction(), entropy_bits: entropy, best_ratio, symbol_size })
}

/// An index table in its at-rest form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedTable {
    pub codec: CodecId,
    pub rows: usize,
    pub columns: usize,
    pub bytes: Vec<u8>,
}

impl CompressedTable {
    pub fn raw_len(&self) -> usize {
        self.rows * self.columns.div_ceil(8)
    }
}

pub fn compress_table(table: &BitmapIndexTable, codec: &dyn TableCodec) -> CompressedTable {
    CompressedTable {
        codec: codec.id(),
        rows: table.rows,
        columns: table.columns,
        bytes: codec.compress(&table.bits),
    }
}

pub fn decompress_table(
    stored: &CompressedTable,
    codec: &dyn TableCodec,
) -> Result<BitmapIndexTable, IndexError> {
    if codec.id() != stored.codec {
        return Err(CodecError::Unknown(stored.codec.0).into());
    }
    let bits = codec.decompress(&stored.bytes, stored.raw_len())?;
    BitmapIndexTable::from_bytes(stored.rows, stored.columns, bits)
}

/// Compressed table that is decoded on first use and then cached.
pub struct LazyTable {
    stored: CompressedTable,
    codec: Arc<dyn TableCodec>,
    decoded: OnceBox<BitmapIndexTable>,
    decodes: AtomicU32,
}

impl LazyTable {
    pub fn new(stored: CompressedTable, codec: Arc<dyn TableCodec>) -> Self {
        Self { stored, codec, decoded: OnceBox::new(), decodes: AtomicU32::new(0) }
    }

    /// Wraps a table that is already in memory; no decompression will occur.
    pub fn with_decoded(table: BitmapIndexTable, codec: Arc<dyn TableCodec>) -> Self {
        let stored = compress_table(&table, codec.as_ref());
        let lazy = Self::new(stored, codec);
        let _ = lazy.decoded.set(alloc::boxed::Box::new(table));
        lazy
    }

    pub fn stored(&self) -> &CompressedTable {
        &self.stored
    }

    pub fn codec(&self) -> &Arc<dyn TableCodec> {
        &self.codec
    }

    pub fn is_decoded(&self) -> bool {
        self.decoded.get().is_some()
    }

    /// Number of decompressions performed so far.
    pub fn decode_count(&self) -> u32 {
        self.decodes.load(Ordering::Relaxed)
    }

    pub fn table(&self) -> Result<&BitmapIndexTable, IndexError> {
        if let Some(t) = self.decoded.get() {
            return Ok(t);
        }
        let table = decompress_table(&self.stored, self.codec.as_ref())?;
        self.decodes.fetch_add(1, Ordering::Relaxed);
        Ok(self.decoded.get_or_init(|| alloc::boxed::Box::new(table)))
    }
}

impl Clone for LazyTable {
    fn clone(&self) -> Self {
        let lazy = Self::new(self.stored.clone(), self.codec.clone());
        if let Some(t) = self.decoded.get() {
            let _ = lazy.decoded.set(alloc::boxed::Box::new(t.clone()));
        }
        lazy
    }
}

impl PartialEq for LazyTable {
    fn eq(&self, other: &Self) -> bool {
        self.stored == other.stored
    }
}

impl core::fmt::Debug for LazyTable {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("LazyTable")
            .field("codec", &self.stored.codec)
            .field("rows", &self.stored.rows)
            .field("columns", &self.stored.columns)
            .field("compressed_len", &self.stored.bytes.len())
            .field("decoded", &self.is_decoded())
            .finish()
    }
}
