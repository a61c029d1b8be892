//! Key management, per-message signatures, peer records and blacklisting.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::wire::TransportAddress;
use crate::Millis;

/// Number of RTT samples kept per peer; the oldest is evicted first.
pub const RTT_CAPACITY: usize = 32;

/// Samples that establish the latency a peer first presented.
pub const ADVERTISED_RTT_SAMPLES: usize = 3;

/// A 32-byte Ed25519 public key. Peers are identified by their key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PublicKey(pub [u8; 32]);

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn verify(&self, message: &[u8], signature: &Signature) -> bool {
        let Ok(key) = VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
        key.verify(message, &sig).is_ok()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s.trim()).ok()?;
        Some(PublicKey(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// A 64-byte Ed25519 signature.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; 64]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..6]))
    }
}

impl Serialize for Signature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 64] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("signature must be 64 bytes"))?;
        Ok(Signature(arr))
    }
}

/// Signing key material. The private half is the 32-byte seed.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    public: PublicKey,
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(&seed);
        let public = PublicKey(signing.verifying_key().to_bytes());
        KeyPair { signing, public }
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn seed(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.signing.sign(message).to_bytes())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

/// Deterministic for a fixed seed, otherwise drawn from the OS generator.
pub fn generate_keypair(seed: Option<[u8; 32]>) -> KeyPair {
    let seed = seed.unwrap_or_else(|| {
        let mut s = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut s);
        s
    });
    KeyPair::from_seed(seed)
}

/// Draws a keypair from a caller-supplied generator (simulations).
pub fn keypair_from_rng<R: RngCore>(rng: &mut R) -> KeyPair {
    let mut seed = [0u8; 32];
    rng.fill_bytes(&mut seed);
    KeyPair::from_seed(seed)
}

/// Loads a raw 32-byte seed from `path`, creating it if absent.
pub fn load_or_create_key(path: &Path, seed: Option<[u8; 32]>) -> io::Result<KeyPair> {
    if path.exists() {
        let bytes = fs::read(path)?;
        let seed: [u8; 32] = bytes.try_into().map_err(|_| {
            io::Error::new(io::ErrorKind::InvalidData, "key file must hold a 32-byte seed")
        })?;
        return Ok(KeyPair::from_seed(seed));
    }
    let key = generate_keypair(seed);
    write_key_file(path, &key.seed())?;
    Ok(key)
}

#[cfg(unix)]
fn write_key_file(path: &Path, seed: &[u8; 32]) -> io::Result<()> {
    use std::io::Write;
    use std::os::unix::fs::OpenOptionsExt;
    let mut f = fs::OpenOptions::new().write(true).create_new(true).mode(0o600).open(path)?;
    f.write_all(seed)
}

#[cfg(not(unix))]
fn write_key_file(path: &Path, seed: &[u8; 32]) -> io::Result<()> {
    fs::write(path, seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RttSample {
    pub at: Millis,
    pub rtt_ms: f64,
}

/// A known peer: its key, the addresses it was seen at and its latency history.
#[derive(Debug, Clone)]
pub struct Peer {
    pub key: PublicKey,
    pub addresses: Vec<TransportAddress>,
    pub last_received: Millis,
    pub last_ping_sent: Option<Millis>,
    pub rtt_samples: VecDeque<RttSample>,
    pub introduced_by: Option<PublicKey>,
    /// Minimum RTT the peer presented during its first measurements.
    pub advertised_min_rtt: Option<f64>,
    /// Set once a measurement undercuts the advertised minimum by more than the tolerance.
    pub latency_fraud: bool,
    /// Circuit builds through this peer that timed out or failed.
    pub relay_failures: u32,
    /// Pings sent since `last_received`; drives the liveness timeline.
    pub(crate) liveness_pings: u8,
    samples_seen: usize,
    advertised_explicitly: bool,
}

impl Peer {
    pub fn new(key: PublicKey, address: TransportAddress, now: Millis) -> Self {
        Peer {
            key,
            addresses: vec![address],
            last_received: now,
            last_ping_sent: None,
            rtt_samples: VecDeque::with_capacity(RTT_CAPACITY),
            introduced_by: None,
            advertised_min_rtt: None,
            latency_fraud: false,
            relay_failures: 0,
            liveness_pings: 0,
            samples_seen: 0,
            advertised_explicitly: false,
        }
    }

    pub fn address(&self) -> &TransportAddress {
        &self.addresses[0]
    }

    /// Records inbound traffic; resets the liveness timeline.
    pub fn touch(&mut self, now: Millis, from: &TransportAddress) {
        if now > self.last_received {
            self.last_received = now;
        }
        self.liveness_pings = 0;
        if !self.addresses.contains(from) {
            self.addresses.insert(0, from.clone());
            self.addresses.truncate(4);
        }
    }

    /// Records the peer's own latency claim.
    pub fn advertise_min_rtt(&mut self, rtt_ms: f64) {
        self.advertised_min_rtt = Some(rtt_ms);
        self.advertised_explicitly = true;
    }

    /// Appends a sample, keeping timestamp order and the capacity bound, and
    /// applies the latency consistency rule.
    pub fn record_rtt(&mut self, at: Millis, rtt_ms: f64, tolerance_ms: f64) {
        if self.rtt_samples.len() == RTT_CAPACITY {
            self.rtt_samples.pop_front();
        }
        let pos = self.rtt_samples.partition_point(|s| s.at <= at);
        self.rtt_samples.insert(pos, RttSample { at, rtt_ms });
        self.samples_seen += 1;

        match self.advertised_min_rtt {
            Some(min) if self.advertised_explicitly || self.samples_seen > ADVERTISED_RTT_SAMPLES => {
                if rtt_ms < min - tolerance_ms {
                    self.latency_fraud = true;
                }
            }
            Some(min) => self.advertised_min_rtt = Some(min.min(rtt_ms)),
            None => self.advertised_min_rtt = Some(rtt_ms),
        }
    }

    pub fn median_rtt(&self) -> Option<f64> {
        if self.rtt_samples.is_empty() {
            return None;
        }
        let mut v: Vec<f64> = self.rtt_samples.iter().map(|s| s.rtt_ms).collect();
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len();
        Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
    }

    pub fn suspected(&self) -> bool {
        self.latency_fraud || self.relay_failures > 0
    }
}

/// Node-local blacklist.
#[derive(Debug, Default, Clone)]
pub struct Blacklist {
    keys: HashSet<PublicKey>,
}

impl Blacklist {
    pub fn blacklist(&mut self, key: PublicKey) {
        self.keys.insert(key);
    }

    pub fn is_blacklisted(&self, key: &PublicKey) -> bool {
        self.keys.contains(key)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_seed_is_stable() {
        let a = generate_keypair(Some([0u8; 32]));
        let b = generate_keypair(Some([0u8; 32]));
        assert_eq!(a.public(), b.public());
        assert_eq!(
            a.public().to_hex(),
            "3b6a27bcceb6a42d62a3a8d02a6f0d73653215771de243a63ac048a18b59da29"
        );
    }

    #[test]
    fn random_keys_differ() {
        assert_ne!(generate_keypair(None).public(), generate_keypair(None).public());
    }

    #[test]
    fn sign_verify_roundtrip() {
        let k = generate_keypair(None);
        let msg = vec![0xabu8; 1024];
        let sig = k.sign(&msg);
        assert!(k.public().verify(&msg, &sig));
        let mut other = msg.clone();
        other[7] ^= 1;
        assert!(!k.public().verify(&other, &sig));
    }

    #[test]
    fn blacklist_membership() {
        let mut bl = Blacklist::default();
        let k = generate_keypair(None).public();
        assert!(!bl.is_blacklisted(&k));
        bl.blacklist(k);
        assert!(bl.is_blacklisted(&k));
    }

    #[test]
    fn rtt_ring_is_bounded_and_sorted() {
        let key = generate_keypair(None).public();
        let mut p = Peer::new(key, TransportAddress::Sim(1), 0);
        for i in (0..40u64).rev() {
            p.record_rtt(i, 50.0, 5.0);
        }
        assert_eq!(p.rtt_samples.len(), RTT_CAPACITY);
        assert!(p.rtt_samples.iter().zip(p.rtt_samples.iter().skip(1)).all(|(a, b)| a.at <= b.at));
    }

    #[test]
    fn explicit_advertisement_then_fast_answer_flags_fraud() {
        let key = generate_keypair(None).public();
        let mut p = Peer::new(key, TransportAddress::Sim(1), 0);
        p.advertise_min_rtt(50.0);
        p.record_rtt(10, 1.0, 5.0);
        assert!(p.latency_fraud);
    }

    #[test]
    fn advertised_minimum_comes_from_first_samples() {
        let key = generate_keypair(None).public();
        let mut p = Peer::new(key, TransportAddress::Sim(1), 0);
        for (i, rtt) in [52.0, 50.0, 51.0].into_iter().enumerate() {
            p.record_rtt(i as u64, rtt, 5.0);
        }
        assert_eq!(p.advertised_min_rtt, Some(50.0));
        p.record_rtt(10, 46.0, 5.0);
        assert!(!p.latency_fraud, "within tolerance");
        p.record_rtt(11, 44.0, 5.0);
        assert!(p.latency_fraud);
    }

    #[test]
    fn key_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("node.key");
        let a = load_or_create_key(&path, Some([7u8; 32])).unwrap();
        let b = load_or_create_key(&path, None).unwrap();
        assert_eq!(a.public(), b.public());
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            let mode = fs::metadata(&path).unwrap().permissions().mode();
            assert_eq!(mode & 0o777, 0o600);
        }
    }
}
