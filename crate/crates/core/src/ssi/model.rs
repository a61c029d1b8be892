//! Pseudonyms as hash-chained attributes with metadata and attestations.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::SsiError;
use crate::codec::{Reader, Writer};
use crate::dpki::{generate_keypair, KeyPair, PublicKey, Signature};
use crate::zkp::{commit, Commitment, Domain, Opening, ALG_RANGE, ALG_SIGMA};
use crate::{sha256, Hash32, Millis};

pub const SUPPORTED_ALGORITHMS: [&str; 2] = [ALG_RANGE, ALG_SIGMA];

/// One chain link: 64 bytes, `prev_hash | public_data_hash`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Attribute {
    pub prev_hash: Hash32,
    pub public_data_hash: Hash32,
}

impl Attribute {
    pub fn to_bytes(&self) -> [u8; 64] {
        let mut out = [0u8; 64];
        out[..32].copy_from_slice(&self.prev_hash);
        out[32..].copy_from_slice(&self.public_data_hash);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        if b.len() != 64 {
            return None;
        }
        Some(Attribute { prev_hash: b[..32].try_into().ok()?, public_data_hash: b[32..].try_into().ok()? })
    }

    pub fn hash(&self) -> Hash32 {
        sha256(&self.to_bytes())
    }
}

/// Hash a chain's first link must point to.
pub fn chain_anchor(pseudonym_key: &PublicKey) -> Hash32 {
    sha256(pseudonym_key.as_bytes())
}

/// Checks every link back to the pseudonym key.
pub fn verify_chain(pseudonym_key: &PublicKey, chain: &[Attribute]) -> bool {
    let mut expected = chain_anchor(pseudonym_key);
    for attr in chain {
        if attr.prev_hash != expected {
            return false;
        }
        expected = attr.hash();
    }
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub attribute_hash: Hash32,
    pub name: String,
    pub algorithm: String,
    pub version: String,
    pub valid_from: Option<Millis>,
    pub valid_until: Option<Millis>,
    pub extra: BTreeMap<String, String>,
}

impl Metadata {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(&self.attribute_hash)
            .str(&self.name)
            .str(&self.algorithm)
            .str(&self.version)
            .opt_u64(self.valid_from)
            .opt_u64(self.valid_until)
            .u32(self.extra.len() as u32);
        for (k, v) in &self.extra {
            w.str(k).str(v);
        }
        w.finish()
    }

    pub fn read(r: &mut Reader<'_>) -> Option<Self> {
        let attribute_hash = r.array()?;
        let name = r.string()?;
        let algorithm = r.string()?;
        let version = r.string()?;
        let valid_from = r.opt_u64()?;
        let valid_until = r.opt_u64()?;
        let n = r.u32()?;
        let mut extra = BTreeMap::new();
        for _ in 0..n {
            let k = r.string()?;
            extra.insert(k, r.string()?);
        }
        Some(Metadata { attribute_hash, name, algorithm, version, valid_from, valid_until, extra })
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        let mut r = Reader::new(b);
        let m = Self::read(&mut r)?;
        r.is_done().then_some(m)
    }

    pub fn hash(&self) -> Hash32 {
        sha256(&self.to_bytes())
    }

    pub fn matches(&self, triple: &Triple) -> bool {
        self.name == triple.name && self.algorithm == triple.algorithm && self.version == triple.version
    }

    pub fn is_valid_at(&self, now: Millis) -> bool {
        self.valid_from.is_none_or(|f| now >= f) && self.valid_until.is_none_or(|u| now <= u)
    }
}

/// The `(name, algorithm, version)` matching key of a verification request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub name: String,
    pub algorithm: String,
    pub version: String,
}

impl Triple {
    pub fn new(name: &str, algorithm: &str, version: &str) -> Self {
        Triple { name: name.into(), algorithm: algorithm.into(), version: version.into() }
    }
}

/// A third party's signature over a metadata hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attestation {
    pub metadata_hash: Hash32,
    pub attester_key: PublicKey,
    pub signature: Signature,
}

impl Attestation {
    pub const LEN: usize = 128;

    pub fn verify(&self) -> bool {
        self.attester_key.verify(&self.metadata_hash, &self.signature)
    }

    pub fn to_bytes(&self) -> [u8; Self::LEN] {
        let mut out = [0u8; Self::LEN];
        out[..32].copy_from_slice(&self.metadata_hash);
        out[32..64].copy_from_slice(self.attester_key.as_bytes());
        out[64..].copy_from_slice(&self.signature.0);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        if b.len() != Self::LEN {
            return None;
        }
        Some(Attestation {
            metadata_hash: b[..32].try_into().ok()?,
            attester_key: PublicKey(b[32..64].try_into().ok()?),
            signature: Signature(b[64..].try_into().ok()?),
        })
    }
}

/// Signs `metadata` with the attester's pseudonym key (flow A.2).
pub fn attest(attester: &Pseudonym, metadata: &Metadata) -> Attestation {
    let metadata_hash = metadata.hash();
    Attestation { metadata_hash, attester_key: attester.public(), signature: attester.keypair.sign(&metadata_hash) }
}

/// Optional knobs when adding an attribute.
#[derive(Debug, Clone, Default)]
pub struct AttributeOptions {
    pub valid_from: Option<Millis>,
    pub valid_until: Option<Millis>,
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct Pseudonym {
    keypair: KeyPair,
    chain: Vec<Attribute>,
    metadata: HashMap<Hash32, Metadata>,
    attestations: HashMap<Hash32, Vec<Attestation>>,
    openings: HashMap<Hash32, Opening>,
    disclosure_whitelist: HashMap<Hash32, HashSet<PublicKey>>,
}

impl Pseudonym {
    /// Fresh key pair, empty chain; no vetting involved.
    pub fn create() -> Self {
        Self::from_keypair(generate_keypair(None))
    }

    pub fn from_keypair(keypair: KeyPair) -> Self {
        Pseudonym {
            keypair,
            chain: Vec::new(),
            metadata: HashMap::new(),
            attestations: HashMap::new(),
            openings: HashMap::new(),
            disclosure_whitelist: HashMap::new(),
        }
    }

    pub fn public(&self) -> PublicKey {
        self.keypair.public()
    }

    pub fn keypair(&self) -> &KeyPair {
        &self.keypair
    }

    pub fn chain(&self) -> &[Attribute] {
        &self.chain
    }

    /// Claim creation (flow A.1): commits to `value`, appends the link and
    /// stores metadata. The opening stays local.
    #[allow(clippy::too_many_arguments)]
    pub fn add_attribute<R: RngCore + CryptoRng>(
        &mut self,
        name: &str,
        algorithm: &str,
        version: &str,
        value: u64,
        options: AttributeOptions,
        rng: &mut R,
    ) -> Result<(Attribute, Metadata), SsiError> {
        if !SUPPORTED_ALGORITHMS.contains(&algorithm) {
            return Err(SsiError::UnknownAlgorithm(algorithm.to_string()));
        }
        let (commitment, opening) = commit(value, None, Domain::default(), rng)?;
        let prev_hash = self.chain.last().map(Attribute::hash).unwrap_or_else(|| chain_anchor(&self.public()));
        let attribute = Attribute { prev_hash, public_data_hash: sha256(&commitment.to_bytes()) };
        let attribute_hash = attribute.hash();
        let metadata = Metadata {
            attribute_hash,
            name: name.to_string(),
            algorithm: algorithm.to_string(),
            version: version.to_string(),
            valid_from: options.valid_from,
            valid_until: options.valid_until,
            extra: options.extra,
        };
        self.chain.push(attribute);
        self.metadata.insert(attribute_hash, metadata.clone());
        self.openings.insert(attribute_hash, opening);
        Ok((attribute, metadata))
    }

    /// Restores a link read from persistent storage.
    pub fn restore_attribute(&mut self, attribute: Attribute, metadata: Metadata, opening: Opening) -> Result<(), SsiError> {
        let prev = self.chain.last().map(Attribute::hash).unwrap_or_else(|| chain_anchor(&self.public()));
        if attribute.prev_hash != prev
            || metadata.attribute_hash != attribute.hash()
            || attribute.public_data_hash != sha256(&opening.commitment().to_bytes())
        {
            return Err(SsiError::ChainInvalid);
        }
        self.metadata.insert(metadata.attribute_hash, metadata);
        self.openings.insert(attribute.hash(), opening);
        self.chain.push(attribute);
        Ok(())
    }

    /// Attaches an attestation received from an attester.
    pub fn receive_attestation(&mut self, attestation: Attestation) -> Result<(), SsiError> {
        if !attestation.verify() {
            return Err(SsiError::AttestationInvalid);
        }
        if !self.metadata.values().any(|m| m.hash() == attestation.metadata_hash) {
            return Err(SsiError::UnknownAttribute);
        }
        let list = self.attestations.entry(attestation.metadata_hash).or_default();
        if !list.contains(&attestation) {
            list.push(attestation);
        }
        Ok(())
    }

    pub fn metadata_for(&self, attribute_hash: &Hash32) -> Option<&Metadata> {
        self.metadata.get(attribute_hash)
    }

    pub fn metadata_at(&self, index: usize) -> Option<&Metadata> {
        self.metadata.get(&self.chain.get(index)?.hash())
    }

    pub fn attestations_for(&self, metadata_hash: &Hash32) -> &[Attestation] {
        self.attestations.get(metadata_hash).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Keys that signed for the attribute's metadata.
    pub fn attesters_of(&self, attribute_hash: &Hash32) -> Vec<PublicKey> {
        self.metadata
            .get(attribute_hash)
            .map(|m| self.attestations_for(&m.hash()).iter().map(|a| a.attester_key).collect())
            .unwrap_or_default()
    }

    pub fn opening(&self, attribute_hash: &Hash32) -> Option<&Opening> {
        self.openings.get(attribute_hash)
    }

    pub fn commitment_at(&self, index: usize) -> Option<Commitment> {
        Some(self.openings.get(&self.chain.get(index)?.hash())?.commitment())
    }

    /// Index of the most recent attribute whose metadata matches `triple`.
    pub fn find_match(&self, triple: &Triple) -> Option<usize> {
        self.chain.iter().enumerate().rev().find_map(|(i, a)| {
            self.metadata.get(&a.hash()).filter(|m| m.matches(triple)).map(|_| i)
        })
    }

    pub fn whitelist(&mut self, attribute_hash: Hash32, verifier: PublicKey) {
        self.disclosure_whitelist.entry(attribute_hash).or_default().insert(verifier);
    }

    pub fn is_whitelisted(&self, attribute_hash: &Hash32, verifier: &PublicKey) -> bool {
        self.disclosure_whitelist.get(attribute_hash).is_some_and(|s| s.contains(verifier))
    }

    /// Signature over a verifier-supplied nonce.
    pub fn prove_ownership(&self, nonce: &[u8]) -> Signature {
        self.keypair.sign(&ownership_message(nonce))
    }

    pub fn attestations(&self) -> impl Iterator<Item = &Attestation> {
        self.attestations.values().flatten()
    }
}

/// Domain-separated message signed to prove pseudonym ownership.
pub fn ownership_message(nonce: &[u8]) -> Vec<u8> {
    let mut m = b"ipv8-ownership".to_vec();
    m.extend_from_slice(nonce);
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zkp::ALG_RANGE;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(11)
    }

    #[test]
    fn new_pseudonym_is_empty_and_unrelated() {
        let a = Pseudonym::create();
        let b = Pseudonym::create();
        assert!(a.chain().is_empty());
        assert_ne!(a.public(), b.public());
    }

    #[test]
    fn first_link_anchors_to_key() {
        let mut p = Pseudonym::create();
        let (attr, meta) = p.add_attribute("age", ALG_RANGE, "version 3", 25, Default::default(), &mut rng()).unwrap();
        assert_eq!(attr.prev_hash, sha256(p.public().as_bytes()));
        assert_eq!(p.chain().len(), 1);
        assert_eq!((meta.name.as_str(), meta.algorithm.as_str(), meta.version.as_str()), ("age", "ZKRP Peng-Bao", "version 3"));
        assert_eq!(meta.attribute_hash, attr.hash());
    }

    #[test]
    fn second_link_points_to_first() {
        let mut r = rng();
        let mut p = Pseudonym::create();
        let (a1, _) = p.add_attribute("age", ALG_RANGE, "version 3", 25, Default::default(), &mut r).unwrap();
        let (a2, _) = p.add_attribute("city", ALG_SIGMA, "1", 7, Default::default(), &mut r).unwrap();
        assert_eq!(a2.prev_hash, a1.hash());
        assert!(verify_chain(&p.public(), p.chain()));
    }

    #[test]
    fn tampered_link_breaks_chain() {
        let mut r = rng();
        let mut p = Pseudonym::create();
        p.add_attribute("age", ALG_RANGE, "version 3", 25, Default::default(), &mut r).unwrap();
        p.add_attribute("age", ALG_RANGE, "version 3", 26, Default::default(), &mut r).unwrap();
        let mut chain = p.chain().to_vec();
        chain[0].public_data_hash[0] ^= 1;
        assert!(!verify_chain(&p.public(), &chain));
    }

    #[test]
    fn unknown_algorithm_rejected() {
        let mut p = Pseudonym::create();
        let err = p.add_attribute("age", "RSA-magic", "1", 1, Default::default(), &mut rng()).unwrap_err();
        assert!(matches!(err, SsiError::UnknownAlgorithm(_)));
    }

    #[test]
    fn attestation_roundtrip_and_exposure() {
        let mut r = rng();
        let mut subject = Pseudonym::create();
        let government = Pseudonym::create();
        let (attr, meta) = subject.add_attribute("age", ALG_RANGE, "version 3", 25, Default::default(), &mut r).unwrap();
        let att = attest(&government, &meta);
        assert!(att.verify());
        subject.receive_attestation(att).unwrap();
        assert_eq!(subject.attesters_of(&attr.hash()), vec![government.public()]);

        let mut altered = meta.clone();
        altered.version = "version 4".into();
        assert!(!government.public().verify(&altered.hash(), &att.signature));
    }

    #[test]
    fn most_recent_match_wins() {
        let mut r = rng();
        let mut p = Pseudonym::create();
        p.add_attribute("age", ALG_RANGE, "version 3", 25, Default::default(), &mut r).unwrap();
        p.add_attribute("name", ALG_SIGMA, "1", 1, Default::default(), &mut r).unwrap();
        p.add_attribute("age", ALG_RANGE, "version 3", 26, Default::default(), &mut r).unwrap();
        p.add_attribute("city", ALG_SIGMA, "1", 2, Default::default(), &mut r).unwrap();
        assert_eq!(p.find_match(&Triple::new("age", ALG_RANGE, "version 3")), Some(2));
        assert_eq!(p.find_match(&Triple::new("age", ALG_SIGMA, "version 3")), None);
    }

    #[test]
    fn metadata_codec_and_validity() {
        let mut extra = BTreeMap::new();
        extra.insert("revocation.mode".to_string(), "validity".to_string());
        let m = Metadata {
            attribute_hash: [1; 32],
            name: "age".into(),
            algorithm: ALG_RANGE.into(),
            version: "version 3".into(),
            valid_from: None,
            valid_until: Some(100),
            extra,
        };
        assert_eq!(Metadata::from_bytes(&m.to_bytes()), Some(m.clone()));
        assert!(m.is_valid_at(99));
        assert!(m.is_valid_at(100));
        assert!(!m.is_valid_at(101));
    }

    #[test]
    fn ownership_signature_binds_nonce() {
        let p = Pseudonym::create();
        let sig = p.prove_ownership(b"nonce-1");
        assert!(p.public().verify(&ownership_message(b"nonce-1"), &sig));
        assert!(!p.public().verify(&ownership_message(b"nonce-2"), &sig));
    }
}
