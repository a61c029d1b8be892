//! Binary envelope framing and the connectionless transport abstraction.
//!
//! Every datagram carries exactly one envelope:
//!
//! ```text
//! version(1) | overlay(20) | msg_type(1) | sender_key(32) | seq(8, BE) | len(4, BE) | payload | signature(64)
//! ```
//!
//! The signature covers every byte before it. Envelopes that fail any check
//! are dropped by the receiver without a reply.

mod transport;

use std::collections::HashSet;
use std::fmt;
use std::net::{Ipv4Addr, SocketAddrV4};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dpki::{KeyPair, PublicKey, Signature};

pub use transport::{
    open_endpoint, run_fabric_until, ConstantLatency, DropReason, Endpoint, EndpointConfig,
    FabricEvent, LatencyModel, Ledger, ReceiveCallback, SharedFabric, SimFabric,
};

pub const ENVELOPE_VERSION: u8 = 0x02;
/// Fixed bytes around the payload: 1 + 20 + 1 + 32 + 8 + 4 + 64.
pub const ENVELOPE_OVERHEAD: usize = 130;
pub const MAX_PAYLOAD: usize = 1 << 24;

const HEADER_LEN: usize = 1 + 20 + 1 + 32 + 8 + 4;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("payload-too-large: {0} bytes")]
    PayloadTooLarge(usize),
    #[error("truncated")]
    Truncated,
    #[error("unsupported version {0:#04x}")]
    UnsupportedVersion(u8),
    #[error("unknown-overlay")]
    UnknownOverlay,
    #[error("bad-signature")]
    BadSignature,
    #[error("bind-failure: {0}")]
    BindFailure(#[from] std::io::Error),
}

/// Routing tag for a community of nodes: the first 20 bytes of SHA-256 over the name.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OverlayId(pub [u8; 20]);

impl OverlayId {
    pub fn from_name(name: &str) -> Self {
        let digest = Sha256::digest(name.as_bytes());
        let mut id = [0u8; 20];
        id.copy_from_slice(&digest[..20]);
        OverlayId(id)
    }
}

impl fmt::Debug for OverlayId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "OverlayId({})", hex::encode(&self.0[..6]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AddressKind {
    Udp = 0,
    Sim = 1,
}

/// Where a datagram came from or goes to.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransportAddress {
    Udp(SocketAddrV4),
    Sim(u64),
}

impl TransportAddress {
    pub fn kind(&self) -> AddressKind {
        match self {
            TransportAddress::Udp(_) => AddressKind::Udp,
            TransportAddress::Sim(_) => AddressKind::Sim,
        }
    }

    /// Kind-specific bytes: 4-byte IPv4 + 2-byte port, or an 8-byte node index.
    pub fn address_bytes(&self) -> Vec<u8> {
        match self {
            TransportAddress::Udp(sa) => {
                let mut v = sa.ip().octets().to_vec();
                v.extend_from_slice(&sa.port().to_be_bytes());
                v
            }
            TransportAddress::Sim(i) => i.to_be_bytes().to_vec(),
        }
    }

    pub fn from_parts(kind: AddressKind, bytes: &[u8]) -> Option<Self> {
        match (kind, bytes.len()) {
            (AddressKind::Udp, 6) => {
                let ip = Ipv4Addr::new(bytes[0], bytes[1], bytes[2], bytes[3]);
                let port = u16::from_be_bytes([bytes[4], bytes[5]]);
                Some(TransportAddress::Udp(SocketAddrV4::new(ip, port)))
            }
            (AddressKind::Sim, 8) => Some(TransportAddress::Sim(u64::from_be_bytes(bytes.try_into().ok()?))),
            _ => None,
        }
    }

    /// Kind byte followed by the address bytes.
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.push(self.kind() as u8);
        out.extend_from_slice(&self.address_bytes());
    }

    /// Inverse of [`TransportAddress::write_to`]; returns the address and bytes consumed.
    pub fn read_from(bytes: &[u8]) -> Option<(Self, usize)> {
        let kind = match *bytes.first()? {
            0 => AddressKind::Udp,
            1 => AddressKind::Sim,
            _ => return None,
        };
        let len = match kind {
            AddressKind::Udp => 6,
            AddressKind::Sim => 8,
        };
        let addr = Self::from_parts(kind, bytes.get(1..1 + len)?)?;
        Some((addr, 1 + len))
    }

    pub fn sim_index(&self) -> Option<u64> {
        match self {
            TransportAddress::Sim(i) => Some(*i),
            TransportAddress::Udp(_) => None,
        }
    }
}

impl fmt::Debug for TransportAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransportAddress::Udp(sa) => write!(f, "udp:{sa}"),
            TransportAddress::Sim(i) => write!(f, "sim:{i}"),
        }
    }
}

impl fmt::Display for TransportAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for TransportAddress {
    type Err = String;

    /// Accepts `sim:N`, `udp:a.b.c.d:port` or a bare `a.b.c.d:port`.
    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(i) = s.strip_prefix("sim:") {
            return i.parse().map(TransportAddress::Sim).map_err(|e| format!("bad sim index: {e}"));
        }
        let rest = s.strip_prefix("udp:").unwrap_or(s);
        rest.parse::<SocketAddrV4>().map(TransportAddress::Udp).map_err(|e| format!("bad address {s:?}: {e}"))
    }
}

/// The signed part of an envelope, before signing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub overlay: OverlayId,
    pub msg_type: u8,
    pub seq: u64,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub version: u8,
    pub overlay: OverlayId,
    pub msg_type: u8,
    pub sender_key: PublicKey,
    pub seq: u64,
    pub payload: Vec<u8>,
    pub signature: Signature,
}

impl Envelope {
    pub fn encoded_len(&self) -> usize {
        ENVELOPE_OVERHEAD + self.payload.len()
    }
}

pub fn encode_envelope(message: &Message, signer: &KeyPair) -> Result<Vec<u8>, WireError> {
    if message.payload.len() >= MAX_PAYLOAD {
        return Err(WireError::PayloadTooLarge(message.payload.len()));
    }
    let mut out = Vec::with_capacity(ENVELOPE_OVERHEAD + message.payload.len());
    out.push(ENVELOPE_VERSION);
    out.extend_from_slice(&message.overlay.0);
    out.push(message.msg_type);
    out.extend_from_slice(signer.public().as_bytes());
    out.extend_from_slice(&message.seq.to_be_bytes());
    out.extend_from_slice(&(message.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&message.payload);
    let sig = signer.sign(&out);
    out.extend_from_slice(&sig.0);
    Ok(out)
}

/// Parses and authenticates one datagram.
pub fn decode_envelope(bytes: &[u8], known_overlays: &HashSet<OverlayId>) -> Result<Envelope, WireError> {
    if bytes.len() < ENVELOPE_OVERHEAD {
        return Err(WireError::Truncated);
    }
    let version = bytes[0];
    if version != ENVELOPE_VERSION {
        return Err(WireError::UnsupportedVersion(version));
    }
    let len = u32::from_be_bytes(bytes[HEADER_LEN - 4..HEADER_LEN].try_into().unwrap()) as usize;
    if len >= MAX_PAYLOAD || bytes.len() != ENVELOPE_OVERHEAD + len {
        return Err(WireError::Truncated);
    }
    let overlay = OverlayId(bytes[1..21].try_into().unwrap());
    if !known_overlays.contains(&overlay) {
        return Err(WireError::UnknownOverlay);
    }
    let msg_type = bytes[21];
    let sender_key = PublicKey(bytes[22..54].try_into().unwrap());
    let seq = u64::from_be_bytes(bytes[54..62].try_into().unwrap());
    let signed_len = HEADER_LEN + len;
    let payload = bytes[HEADER_LEN..signed_len].to_vec();
    let signature = Signature(bytes[signed_len..].try_into().unwrap());
    if !sender_key.verify(&bytes[..signed_len], &signature) {
        return Err(WireError::BadSignature);
    }
    Ok(Envelope { version, overlay, msg_type, sender_key, seq, payload, signature })
}
