//! CBTR corpus dumps: `"CBTR" | version u8 | (flow key | u32 LE length | payload)*`.
//!
//! Records carry no timestamps; a record's ordinal is used as its time in
//! microseconds when read back.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use cbid_core::flow::FlowKeyError;
use cbid_core::{FlowKey, PacketRecord};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"CBTR";
pub const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: bad magic, not a CBTR corpus")]
    Magic { path: PathBuf },
    #[error("{path}: unsupported corpus version {version}")]
    Version { path: PathBuf, version: u8 },
    #[error("{path}: record {record}: {reason}")]
    Record { path: PathBuf, record: u64, reason: String },
}

pub fn write_corpus<'a, I>(path: impl AsRef<Path>, records: I) -> Result<u64, CorpusError>
where
    I: IntoIterator<Item = &'a PacketRecord>,
{
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    let mut n = 0;
    let mut key = Vec::with_capacity(FlowKey::MAX_ENCODED_LEN);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&[VERSION]).map_err(io_err)?;
    for r in records {
        key.clear();
        r.flow.encode_into(&mut key);
        let len = u32::try_from(r.payload.len()).map_err(|_| CorpusError::Record {
            path: path.to_path_buf(),
            record: n,
            reason: "payload longer than 4 GiB".into(),
        })?;
        w.write_all(&key).map_err(io_err)?;
        w.write_all(&len.to_le_bytes()).map_err(io_err)?;
        w.write_all(&r.payload).map_err(io_err)?;
        n += 1;
    }
    w.flush().map_err(io_err)?;
    Ok(n)
}

pub struct CorpusReader {
    path: PathBuf,
    r: BufReader<File>,
    record: u64,
    done: bool,
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<CorpusReader, CorpusError> {
    let path = path.as_ref().to_path_buf();
    let io_err = |source| CorpusError::Io { path: path.clone(), source };
    let mut r = BufReader::new(File::open(&path).map_err(io_err)?);
    let mut head = [0u8; 5];
    r.read_exact(&mut head).map_err(|_| CorpusError::Magic { path: path.clone() })?;
    if &head[..4] != MAGIC {
        return Err(CorpusError::Magic { path });
    }
    if head[4] != VERSION {
        return Err(CorpusError::Version { path, version: head[4] });
    }
    Ok(CorpusReader { path, r, record: 0, done: false })
}

impl CorpusReader {
    fn fail(&mut self, reason: impl Into<String>) -> Option<Result<PacketRecord, CorpusError>> {
        self.done = true;
        Some(Err(CorpusError::Record { path: self.path.clone(), record: self.record, reason: reason.into() }))
    }
}

impl Iterator for CorpusReader {
    type Item = Result<PacketRecord, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut tag = [0u8; 1];
        match self.r.read(&mut tag) {
            Ok(0) => {
                self.done = true;
                return None;
            }
            Ok(_) => {}
            Err(e) => return self.fail(e.to_string()),
        }
        let key_len = match tag[0] {
            4 => FlowKey::V4_ENCODED_LEN,
            6 => FlowKey::V6_ENCODED_LEN,
            t => return self.fail(FlowKeyError::FamilyTag(t).to_string()),
        };
        let mut buf = [0u8; FlowKey::MAX_ENCODED_LEN + 4];
        buf[0] = tag[0];
        if self.r.read_exact(&mut buf[1..key_len + 4]).is_err() {
            return self.fail("truncated record header");
        }
        let flow = match FlowKey::decode(&buf[..key_len]) {
            Ok((k, _)) => k,
            Err(e) => return self.fail(e.to_string()),
        };
        let len = u32::from_le_bytes(buf[key_len..key_len + 4].try_into().unwrap()) as usize;
        let mut payload = Vec::new();
        match (&mut self.r).take(len as u64).read_to_end(&mut payload) {
            Ok(n) if n == len => {}
            Ok(_) => return self.fail("truncated payload"),
            Err(e) => return self.fail(e.to_string()),
        }
        let rec = PacketRecord { flow, payload, timestamp_us: self.record };
        self.record += 1;
        Some(Ok(rec))
    }
}
