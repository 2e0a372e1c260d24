//! pcap / pcapng ingest: TCP and UDP packets with their transport payload.

use std::fs::File;
use std::io::BufReader;
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use cbid_core::{FlowKey, PacketRecord, Protocol};
use etherparse::{NetSlice, SlicedPacket, TransportSlice};
use pcap_parser::traits::{PcapNGPacketBlock, PcapReaderIterator};
use pcap_parser::{create_reader, Block, Linktype, PcapBlockOwned, PcapError};
use thiserror::Error;

const BUFFER: usize = 1 << 16;
const MAX_BUFFER: usize = 1 << 26;

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: not a pcap or pcapng capture ({reason})")]
    Format { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CaptureStats {
    /// Packet records read from the file.
    pub frames: u64,
    /// TCP/UDP packets emitted.
    pub emitted: u64,
    /// Parsed fine but not TCP/UDP (or an IP fragment, or an unsupported link type).
    pub skipped: u64,
    /// Could not be parsed.
    pub malformed: u64,
    /// Timestamps lower than their predecessor, raised to keep the stream ordered.
    pub reordered: u64,
}

#[derive(Debug, Clone, Copy)]
struct Interface {
    linktype: Linktype,
    /// Timestamp units per second.
    resolution: u64,
    offset_s: i64,
}

struct State {
    legacy: Option<(Linktype, bool)>,
    interfaces: Vec<Interface>,
    stats: CaptureStats,
    last_ts: u64,
}

/// Streaming reader over one capture file.
pub struct CaptureReader {
    path: PathBuf,
    reader: Box<dyn PcapReaderIterator>,
    state: State,
    done: bool,
}

pub fn read_capture(path: impl AsRef<Path>) -> Result<CaptureReader, CaptureError> {
    let path = path.as_ref().to_path_buf();
    let file = File::open(&path).map_err(|source| CaptureError::Io { path: path.clone(), source })?;
    let reader = create_reader(BUFFER, BufReader::new(file))
        .map_err(|e| CaptureError::Format { path: path.clone(), reason: e.to_string() })?;
    Ok(CaptureReader {
        path,
        reader,
        state: State { legacy: None, interfaces: Vec::new(), stats: CaptureStats::default(), last_ts: 0 },
        done: false,
    })
}

impl CaptureReader {
    pub fn stats(&self) -> &CaptureStats {
        &self.state.stats
    }
}

impl Iterator for CaptureReader {
    type Item = Result<PacketRecord, CaptureError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            match self.reader.next() {
                Ok((offset, block)) => {
                    let rec = self.state.handle(block);
                    self.reader.consume(offset);
                    if rec.is_some() {
                        return rec.map(Ok);
                    }
                }
                Err(PcapError::Eof) => self.done = true,
                Err(PcapError::UnexpectedEof) => {
                    self.state.stats.malformed += 1;
                    self.done = true;
                }
                Err(PcapError::Incomplete(_)) => {
                    if self.reader.reader_exhausted() {
                        // A record cut short at the end of the file.
                        self.state.stats.malformed += 1;
                        self.done = true;
                        continue;
                    }
                    let before = self.reader.data().len();
                    if self.reader.refill().is_err() {
                        self.done = true;
                        return Some(Err(CaptureError::Format {
                            path: self.path.clone(),
                            reason: "read error".into(),
                        }));
                    }
                    let stuck = self.reader.data().len() == before && !self.reader.reader_exhausted();
                    if stuck {
                        let cap = self.reader.data().len().max(BUFFER) * 2;
                        if cap > MAX_BUFFER || !self.reader.grow(cap) {
                            self.done = true;
                            return Some(Err(CaptureError::Format {
                                path: self.path.clone(),
                                reason: "record larger than the read buffer".into(),
                            }));
                        }
                    }
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(CaptureError::Format { path: self.path.clone(), reason: e.to_string() }));
                }
            }
        }
        None
    }
}

impl State {
    fn handle(&mut self, block: PcapBlockOwned<'_>) -> Option<PacketRecord> {
        let (linktype, ts, data) = match block {
            PcapBlockOwned::LegacyHeader(h) => {
                self.legacy = Some((h.network, h.is_nanosecond_precision()));
                return None;
            }
            PcapBlockOwned::Legacy(b) => {
                let (lt, nanos) = self.legacy?;
                let frac = if nanos { b.ts_usec as u64 / 1000 } else { b.ts_usec as u64 };
                (lt, Some(b.ts_sec as u64 * 1_000_000 + frac), b.data)
            }
            PcapBlockOwned::NG(Block::SectionHeader(_)) => {
                self.interfaces.clear();
                return None;
            }
            PcapBlockOwned::NG(Block::InterfaceDescription(idb)) => {
                self.interfaces.push(Interface {
                    linktype: idb.linktype,
                    resolution: idb.ts_resolution().unwrap_or(1_000_000),
                    offset_s: idb.ts_offset(),
                });
                return None;
            }
            PcapBlockOwned::NG(Block::EnhancedPacket(epb)) => {
                self.stats.frames += 1;
                let Some(iface) = self.interfaces.get(epb.if_id as usize).copied() else {
                    self.stats.malformed += 1;
                    return None;
                };
                let raw = ((epb.ts_high as u128) << 32) | epb.ts_low as u128;
                let us = raw * 1_000_000 / iface.resolution.max(1) as u128;
                let us = (us as i128 + iface.offset_s as i128 * 1_000_000).max(0) as u64;
                return self.packet(iface.linktype, Some(us), epb.packet_data());
            }
            PcapBlockOwned::NG(Block::SimplePacket(spb)) => {
                self.stats.frames += 1;
                let Some(iface) = self.interfaces.first().copied() else {
                    self.stats.malformed += 1;
                    return None;
                };
                return self.packet(iface.linktype, None, spb.packet_data());
            }
            PcapBlockOwned::NG(_) => return None,
        };
        self.stats.frames += 1;
        self.packet(linktype, ts, data)
    }

    fn packet(&mut self, linktype: Linktype, ts: Option<u64>, data: &[u8]) -> Option<PacketRecord> {
        let sliced = match linktype {
            Linktype::ETHERNET => SlicedPacket::from_ethernet(data),
            Linktype::RAW | Linktype::IPV4 | Linktype::IPV6 => SlicedPacket::from_ip(data),
            Linktype::LINUX_SLL => SlicedPacket::from_linux_sll(data),
            Linktype::NULL | Linktype::LOOP if data.len() >= 4 => SlicedPacket::from_ip(&data[4..]),
            Linktype::NULL | Linktype::LOOP => {
                self.stats.malformed += 1;
                return None;
            }
            _ => {
                self.stats.skipped += 1;
                return None;
            }
        };
        let sliced = match sliced {
            Ok(s) => s,
            Err(_) => {
                self.stats.malformed += 1;
                return None;
            }
        };
        let (src, dst): (IpAddr, IpAddr) = match &sliced.net {
            Some(NetSlice::Ipv4(ip)) => (ip.header().source_addr().into(), ip.header().destination_addr().into()),
            Some(NetSlice::Ipv6(ip)) => (ip.header().source_addr().into(), ip.header().destination_addr().into()),
            None => {
                self.stats.skipped += 1;
                return None;
            }
        };
        let (sport, dport, proto, payload) = match &sliced.transport {
            Some(TransportSlice::Tcp(t)) => (t.source_port(), t.destination_port(), Protocol::Tcp, t.payload()),
            Some(TransportSlice::Udp(u)) => (u.source_port(), u.destination_port(), Protocol::Udp, u.payload()),
            _ => {
                self.stats.skipped += 1;
                return None;
            }
        };
        let flow = FlowKey::new(src, dst, sport, dport, proto).ok()?;
        let mut ts = ts.unwrap_or(self.last_ts);
        if ts < self.last_ts {
            self.stats.reordered += 1;
            ts = self.last_ts;
        }
        self.last_ts = ts;
        self.stats.emitted += 1;
        Some(PacketRecord { flow, payload: payload.to_vec(), timestamp_us: ts })
    }
}
