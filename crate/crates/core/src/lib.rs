//! Self-sovereign identity middleware: signed binary messaging, decentralized
//! key handling, Sybil-aware peer discovery, onion-routed covert channels,
//! hash-chained attribute pseudonyms with zero-knowledge disclosure, audit
//! logs and revocation.

pub mod anon;
pub mod codec;
pub mod dpki;
pub mod node;
pub mod overlay;
pub mod ssi;
pub mod store;
pub mod wire;
pub mod zkp;

use sha2::{Digest, Sha256};

/// Milliseconds on the node's injected clock (simulated or wall).
pub type Millis = u64;

pub type Hash32 = [u8; 32];

pub fn sha256(data: &[u8]) -> Hash32 {
    Sha256::digest(data).into()
}
