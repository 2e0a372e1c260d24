//! Flow identifiers and packet records.

use alloc::vec::Vec;
use core::fmt;
use core::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use thiserror::Error;

/// Transport protocol of a flow. Only TCP and UDP traffic is digested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Protocol {
    Tcp,
    Udp,
}

impl Protocol {
    pub const fn number(self) -> u8 {
        match self {
            Protocol::Tcp => 6,
            Protocol::Udp => 17,
        }
    }

    pub const fn from_number(n: u8) -> Option<Self> {
        match n {
            6 => Some(Protocol::Tcp),
            17 => Some(Protocol::Udp),
            _ => None,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Tcp => "tcp",
            Protocol::Udp => "udp",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlowKeyError {
    #[error("source and destination addresses belong to different IP families")]
    MixedFamilies,
    #[error("flow key encoding truncated")]
    Truncated,
    #[error("unknown address family tag {0}")]
    FamilyTag(u8),
    #[error("unsupported protocol number {0}")]
    Protocol(u8),
}

/// Unidirectional transport 5-tuple.
///
/// Canonical encoding: `family tag (4|6) | src | dst | src_port | dst_port | proto`,
/// addresses in network order, ports big-endian. 14 bytes for IPv4, 38 for IPv6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowKey {
    src: IpAddr,
    dst: IpAddr,
    src_port: u16,
    dst_port: u16,
    protocol: Protocol,
}

impl FlowKey {
    pub const V4_ENCODED_LEN: usize = 14;
    pub const V6_ENCODED_LEN: usize = 38;
    pub const MAX_ENCODED_LEN: usize = Self::V6_ENCODED_LEN;

    pub fn new(
        src: IpAddr,
        dst: IpAddr,
        src_port: u16,
        dst_port: u16,
        protocol: Protocol,
    ) -> Result<Self, FlowKeyError> {
        if src.is_ipv4() != dst.is_ipv4() {
            return Err(FlowKeyError::MixedFamilies);
        }
        Ok(Self { src, dst, src_port, dst_port, protocol })
    }

    pub fn v4(src: [u8; 4], dst: [u8; 4], src_port: u16, dst_port: u16, protocol: Protocol) -> Self {
        Self {
            src: IpAddr::V4(Ipv4Addr::from(src)),
            dst: IpAddr::V4(Ipv4Addr::from(dst)),
            src_port,
            dst_port,
            protocol,
        }
    }

    pub fn src(&self) -> IpAddr {
        self.src
    }
    pub fn dst(&self) -> IpAddr {
        self.dst
    }
    pub fn src_port(&self) -> u16 {
        self.src_port
    }
    pub fn dst_port(&self) -> u16 {
        self.dst_port
    }
    pub fn protocol(&self) -> Protocol {
        self.protocol
    }
    pub fn is_ipv4(&self) -> bool {
        self.src.is_ipv4()
    }

    pub fn encoded_len(&self) -> usize {
        if self.is_ipv4() {
            Self::V4_ENCODED_LEN
        } else {
            Self::V6_ENCODED_LEN
        }
    }

    /// Appends the canonical encoding to `out`.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        match (self.src, self.dst) {
            (IpAddr::V4(s), IpAddr::V4(d)) => {
                out.push(4);
                out.extend_from_slice(&s.octets());
                out.extend_from_slice(&d.octets());
            }
            (IpAddr::V6(s), IpAddr::V6(d)) => {
                out.push(6);
                out.extend_from_slice(&s.octets());
                out.extend_from_slice(&d.octets());
            }
            _ => unreachable!("constructors reject mixed families"),
        }
        out.extend_from_slice(&self.src_port.to_be_bytes());
        out.extend_from_slice(&self.dst_port.to_be_bytes());
        out.push(self.protocol.number());
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut v);
        v
    }

    /// Decodes one key from the front of `bytes`, returning it and the bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize), FlowKeyError> {
        let tag = *bytes.first().ok_or(FlowKeyError::Truncated)?;
        let addr_len = match tag {
            4 => 4,
            6 => 16,
            t => return Err(FlowKeyError::FamilyTag(t)),
        };
        let total = 1 + 2 * addr_len + 5;
        if bytes.len() < total {
            return Err(FlowKeyError::Truncated);
        }
        let a = &bytes[1..1 + addr_len];
        let b = &bytes[1 + addr_len..1 + 2 * addr_len];
        let (src, dst) = if addr_len == 4 {
            let s: [u8; 4] = a.try_into().unwrap();
            let d: [u8; 4] = b.try_into().unwrap();
            (IpAddr::V4(Ipv4Addr::from(s)), IpAddr::V4(Ipv4Addr::from(d)))
        } else {
            let s: [u8; 16] = a.try_into().unwrap();
            let d: [u8; 16] = b.try_into().unwrap();
            (IpAddr::V6(Ipv6Addr::from(s)), IpAddr::V6(Ipv6Addr::from(d)))
        };
        let p = 1 + 2 * addr_len;
        let src_port = u16::from_be_bytes([bytes[p], bytes[p + 1]]);
        let dst_port = u16::from_be_bytes([bytes[p + 2], bytes[p + 3]]);
        let protocol =
            Protocol::from_number(bytes[p + 4]).ok_or(FlowKeyError::Protocol(bytes[p + 4]))?;
        Ok((Self { src, dst, src_port, dst_port, protocol }, total))
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.src {
            IpAddr::V4(_) => write!(
                f,
                "{} {}:{} -> {}:{}",
                self.protocol, self.src, self.src_port, self.dst, self.dst_port
            ),
            IpAddr::V6(_) => write!(
                f,
                "{} [{}]:{} -> [{}]:{}",
                self.protocol, self.src, self.src_port, self.dst, self.dst_port
            ),
        }
    }
}

/// One TCP/UDP packet: its flow, transport payload and capture time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketRecord {
    pub flow: FlowKey,
    pub payload: Vec<u8>,
    /// Microseconds since the Unix epoch.
    pub timestamp_us: u64,
}
