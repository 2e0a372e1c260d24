//! LZMA2 table codec and the codec registry used when reading archives.

use std::io::{Read, Write};
use std::sync::Arc;

use cbid_core::codec::{builtin, CodecError, CodecId, TableCodec};

/// LZMA2 in an `.xz` container, via liblzma.
#[derive(Debug, Clone, Copy)]
pub struct LzmaCodec {
    pub preset: u32,
}

impl Default for LzmaCodec {
    fn default() -> Self {
        Self { preset: 9 }
    }
}

impl TableCodec for LzmaCodec {
    fn id(&self) -> CodecId {
        CodecId::LZMA
    }

    fn compress(&self, raw: &[u8]) -> Vec<u8> {
        let mut enc = xz2::write::XzEncoder::new(Vec::new(), self.preset);
        enc.write_all(raw).expect("writing to a Vec cannot fail");
        enc.finish().expect("writing to a Vec cannot fail")
    }

    fn decompress(&self, data: &[u8], raw_len: usize) -> Result<Vec<u8>, CodecError> {
        let mut out = Vec::with_capacity(raw_len);
        xz2::read::XzDecoder::new(data)
            .take(raw_len as u64 + 1)
            .read_to_end(&mut out)
            .map_err(|_| CodecError::Corrupt("xz stream"))?;
        if out.len() != raw_len {
            return Err(CodecError::Length { expected: raw_len, got: out.len() });
        }
        Ok(out)
    }
}

pub fn default_codec() -> Arc<dyn TableCodec> {
    Arc::new(LzmaCodec::default())
}

pub fn codec_for(id: CodecId) -> Option<Arc<dyn TableCodec>> {
    match id {
        CodecId::LZMA => Some(default_codec()),
        other => builtin(other),
    }
}

pub fn codec_by_name(name: &str) -> Option<Arc<dyn TableCodec>> {
    match name {
        "raw" => codec_for(CodecId::RAW),
        "deflate" => codec_for(CodecId::DEFLATE),
        "lzma" | "lzma2" | "xz" => codec_for(CodecId::LZMA),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lzma_round_trip_and_sparse_gain() {
        let mut raw = vec![0u8; 1 << 16];
        for i in (0..raw.len()).step_by(37) {
            raw[i] = 1 << (i % 8);
        }
        let c = LzmaCodec::default();
        let z = c.compress(&raw);
        assert!(z.len() < raw.len() / 4);
        assert_eq!(c.decompress(&z, raw.len()).unwrap(), raw);
        assert!(c.decompress(&z, raw.len() - 1).is_err());
        assert!(c.decompress(&z[..z.len() / 2], raw.len()).is_err());
    }

    #[test]
    fn registry_covers_all_ids() {
        for id in [CodecId::RAW, CodecId::DEFLATE, CodecId::LZMA] {
            assert_eq!(codec_for(id).unwrap().id(), id);
        }
        assert!(codec_for(CodecId(9)).is_none());
        assert_eq!(codec_by_name("xz").unwrap().id(), CodecId::LZMA);
        assert!(codec_by_name("zstd").is_none());
    }
}
