//! The three revocation mechanisms: a register node, a gossiped shared log,
//! and validity terms carried in the metadata itself.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::codec::{Reader, Writer};
use crate::dpki::{KeyPair, PublicKey, Signature};
use crate::ssi::{Attestation, Metadata};
use crate::{Hash32, Millis};

/// Metadata key listing the modes a verifier must consult, comma separated.
pub const META_REVOCATION_MODE: &str = "revocation.mode";
/// Metadata key holding the register node's transport address.
pub const META_REVOCATION_REGISTER: &str = "revocation.register";

/// Entries kept in memory by the shared log before the oldest are evicted.
pub const SHARED_LOG_CAPACITY: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RevocationMode {
    /// Query a register node at verification time.
    Register,
    /// Entries flooded over gossip into every node's shared log.
    SharedLog,
    /// Expiry from the metadata's validity terms; no messages.
    Validity,
}

impl fmt::Display for RevocationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RevocationMode::Register => "register",
            RevocationMode::SharedLog => "log",
            RevocationMode::Validity => "validity",
        })
    }
}

impl FromStr for RevocationMode {
    type Err = StoreError;
    fn from_str(s: &str) -> Result<Self, StoreError> {
        match s.trim() {
            "register" | "1" => Ok(RevocationMode::Register),
            "log" | "2" => Ok(RevocationMode::SharedLog),
            "validity" | "3" => Ok(RevocationMode::Validity),
            other => Err(StoreError::UnknownMode(other.to_string())),
        }
    }
}

/// Modes declared in metadata. Validity terms are always honoured.
pub fn declared_modes(metadata: &Metadata) -> Vec<RevocationMode> {
    let mut modes: Vec<RevocationMode> = metadata
        .extra
        .get(META_REVOCATION_MODE)
        .map(|s| s.split(',').filter_map(|m| m.parse().ok()).collect())
        .unwrap_or_default();
    if !modes.contains(&RevocationMode::Validity) {
        modes.push(RevocationMode::Validity);
    }
    modes
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RevocationStatus {
    Valid,
    Revoked,
    Expired,
    /// The register could not be reached.
    Unknown,
}

impl RevocationStatus {
    pub fn code(self) -> u8 {
        match self {
            RevocationStatus::Valid => 0,
            RevocationStatus::Revoked => 1,
            RevocationStatus::Expired => 2,
            RevocationStatus::Unknown => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => RevocationStatus::Valid,
            1 => RevocationStatus::Revoked,
            2 => RevocationStatus::Expired,
            3 => RevocationStatus::Unknown,
            _ => return None,
        })
    }

    /// Combines statuses from several modes; the most severe wins.
    pub fn combine(self, other: Self) -> Self {
        use RevocationStatus::*;
        match (self, other) {
            (Revoked, _) | (_, Revoked) => Revoked,
            (Expired, _) | (_, Expired) => Expired,
            (Unknown, _) | (_, Unknown) => Unknown,
            _ => Valid,
        }
    }
}

/// An attester withdrawing its own attestation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RevocationEntry {
    pub metadata_hash: Hash32,
    pub attester_key: PublicKey,
    pub revoked_at: Millis,
    pub signature: Signature,
}

impl RevocationEntry {
    pub const LEN: usize = 32 + 32 + 8 + 64;

    fn signed_bytes(metadata_hash: &Hash32, attester: &PublicKey, revoked_at: Millis) -> Vec<u8> {
        Writer::new().raw(b"ipv8-revoke").raw(metadata_hash).key(attester).u64(revoked_at).finish()
    }

    pub fn verify(&self) -> bool {
        let msg = Self::signed_bytes(&self.metadata_hash, &self.attester_key, self.revoked_at);
        self.attester_key.verify(&msg, &self.signature)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new().raw(&self.metadata_hash).key(&self.attester_key).u64(self.revoked_at).sig(&self.signature).finish()
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        let mut r = Reader::new(b);
        let e = RevocationEntry { metadata_hash: r.array()?, attester_key: r.key()?, revoked_at: r.u64()?, signature: r.sig()? };
        r.is_done().then_some(e)
    }
}

/// Builds a signed revocation. Only the attestation's own attester may revoke it.
pub fn revoke(attester: &KeyPair, attestation: &Attestation, now: Millis) -> Result<RevocationEntry, StoreError> {
    if attestation.attester_key != attester.public() {
        return Err(StoreError::UnauthorizedRevoker);
    }
    let msg = RevocationEntry::signed_bytes(&attestation.metadata_hash, &attester.public(), now);
    Ok(RevocationEntry {
        metadata_hash: attestation.metadata_hash,
        attester_key: attester.public(),
        revoked_at: now,
        signature: attester.sign(&msg),
    })
}

/// A set of accepted revocations. Used by register nodes (mode 1) and as the
/// per-node shared log (mode 2). Membership never reverts.
#[derive(Debug, Clone)]
pub struct RevocationSet {
    revoked: HashSet<(Hash32, PublicKey)>,
    order: VecDeque<(Hash32, PublicKey)>,
    first_seen: HashMap<(Hash32, PublicKey), Millis>,
    capacity: usize,
}

impl Default for RevocationSet {
    fn default() -> Self {
        Self::with_capacity(SHARED_LOG_CAPACITY)
    }
}

impl RevocationSet {
    pub fn with_capacity(capacity: usize) -> Self {
        RevocationSet { revoked: HashSet::new(), order: VecDeque::new(), first_seen: HashMap::new(), capacity }
    }

    /// Accepts a correctly signed entry; returns whether it was new.
    pub fn insert(&mut self, entry: &RevocationEntry, now: Millis) -> Result<bool, StoreError> {
        if !entry.verify() {
            return Err(StoreError::UnauthorizedRevoker);
        }
        let key = (entry.metadata_hash, entry.attester_key);
        if !self.revoked.insert(key) {
            return Ok(false);
        }
        self.order.push_back(key);
        self.first_seen.insert(key, now);
        // FIXME: evicting drops revocations silently; a compacted on-disk log would keep them.
        while self.order.len() > self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.revoked.remove(&old);
                self.first_seen.remove(&old);
            }
        }
        Ok(true)
    }

    pub fn is_revoked(&self, metadata_hash: &Hash32, attester: &PublicKey) -> bool {
        self.revoked.contains(&(*metadata_hash, *attester))
    }

    pub fn first_seen(&self, metadata_hash: &Hash32, attester: &PublicKey) -> Option<Millis> {
        self.first_seen.get(&(*metadata_hash, *attester)).copied()
    }

    pub fn len(&self) -> usize {
        self.revoked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.revoked.is_empty()
    }
}

/// Local part of `check_revocation`: modes 2 and 3. Mode 1 needs a register
/// round trip and is resolved by the node, which folds the answer in with
/// [`RevocationStatus::combine`].
pub fn check_revocation_local(
    attestation: &Attestation,
    metadata: &Metadata,
    mode: RevocationMode,
    shared_log: &RevocationSet,
    now: Millis,
) -> RevocationStatus {
    match mode {
        RevocationMode::Validity => {
            if metadata.is_valid_at(now) {
                RevocationStatus::Valid
            } else {
                RevocationStatus::Expired
            }
        }
        RevocationMode::SharedLog => {
            if shared_log.is_revoked(&attestation.metadata_hash, &attestation.attester_key) {
                RevocationStatus::Revoked
            } else {
                RevocationStatus::Valid
            }
        }
        RevocationMode::Register => RevocationStatus::Unknown,
    }
}

/// Register protocol messages, carried with msg_type 0x20 (request) / 0x21 (response).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegisterRequest {
    Submit(RevocationEntry),
    Query { query_id: u64, metadata_hash: Hash32, attester: PublicKey },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegisterResponse {
    pub query_id: u64,
    pub status: RevocationStatus,
}

impl RegisterRequest {
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            RegisterRequest::Submit(e) => Writer::with_tag(1).raw(&e.to_bytes()).finish(),
            RegisterRequest::Query { query_id, metadata_hash, attester } => {
                Writer::with_tag(2).u64(*query_id).raw(metadata_hash).key(attester).finish()
            }
        }
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        let mut r = Reader::new(b);
        let msg = match r.u8()? {
            1 => RegisterRequest::Submit(RevocationEntry::from_bytes(r.rest())?),
            2 => RegisterRequest::Query { query_id: r.u64()?, metadata_hash: r.array()?, attester: r.key()? },
            _ => return None,
        };
        r.is_done().then_some(msg)
    }
}

impl RegisterResponse {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new().u64(self.query_id).u8(self.status.code()).finish()
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        let mut r = Reader::new(b);
        let resp = RegisterResponse { query_id: r.u64()?, status: RevocationStatus::from_code(r.u8()?)? };
        r.is_done().then_some(resp)
    }
}
