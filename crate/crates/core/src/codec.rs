//! Pluggable byte codecs for index tables at rest.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CodecId(pub u8);

impl CodecId {
    pub const RAW: CodecId = CodecId(0);
    pub const DEFLATE: CodecId = CodecId(1);
    pub const LZMA: CodecId = CodecId(2);

    pub fn name(self) -> &'static str {
        match self {
            CodecId::RAW => "raw",
            CodecId::DEFLATE => "deflate",
            CodecId::LZMA => "lzma2",
            _ => "unknown",
        }
    }
}

impl fmt::Display for CodecId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.name(), self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("no codec registered for id {0}")]
    Unknown(u8),
    #[error("corrupt compressed stream: {0}")]
    Corrupt(&'static str),
    #[error("decoded {got} bytes, expected {expected}")]
    Length { expected: usize, got: usize },
}

pub trait TableCodec: Send + Sync {
    fn id(&self) -> CodecId;
    fn compress(&self, raw: &[u8]) -> Vec<u8>;
    /// Inverts `compress`; `raw_len` is the exact decoded size.
    fn decompress(&self, data: &[u8], raw_len: usize) -> Result<Vec<u8>, CodecError>;
}

/// Stores bytes unchanged.
#[derive(Debug, Default, Clone, Copy)]
pub struct RawCodec;

impl TableCodec for RawCodec {
    fn id(&self) -> CodecId {
        CodecId::RAW
    }

    fn compress(&self, raw: &[u8]) -> Vec<u8> {
        raw.to_vec()
    }

    fn decompress(&self, data: &[u8], raw_len: usize) -> Result<Vec<u8>, CodecError> {
        if data.len() != raw_len {
            return Err(CodecError::Length { expected: raw_len, got: data.len() });
        }
        Ok(data.to_vec())
    }
}

/// Zlib-less DEFLATE stream via `miniz_oxide`.
#[derive(Debug, Clone, Copy)]
pub struct DeflateCodec {
    pub level: u8,
}

impl Default for DeflateCodec {
    fn default() -> Self {
        Self { level: 9 }
    }
}

impl TableCodec for DeflateCodec {
    fn id(&self) -> CodecId {
        CodecId::DEFLATE
    }

    fn compress(&self, raw: &[u8]) -> Vec<u8> {
        miniz_oxide::deflate::compress_to_vec(raw, self.level)
    }

    fn decompress(&self, data: &[u8], raw_len: usize) -> Result<Vec<u8>, CodecError> {
        let out = miniz_oxide::inflate::decompress_to_vec_with_limit(data, raw_len)
            .map_err(|_| CodecError::Corrupt("deflate stream"))?;
        if out.len() != raw_len {
            return Err(CodecError::Length { expected: raw_len, got: out.len() });
        }
        Ok(out)
    }
}

/// Codecs available without `std`.
pub fn builtin(id: CodecId) -> Option<Arc<dyn TableCodec>> {
    match id {
        CodecId::RAW => Some(Arc::new(RawCodec)),
        CodecId::DEFLATE => Some(Arc::new(DeflateCodec::default())),
        _ => None,
    }
}
