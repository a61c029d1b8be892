//! Verifier-side evaluation of a disclosure.
//!
//! [`evaluate`] is a pure function of the recorded inputs so an auditor can
//! replay a session offline and obtain the same outcome.

use serde::{Deserialize, Serialize};

use super::model::{ownership_message, verify_chain, Attestation, Attribute, Metadata, Triple};
use crate::codec::{Reader, Writer};
use crate::dpki::{PublicKey, Signature};
use crate::sha256;
use crate::store::RevocationStatus;
use crate::zkp::{
    confidence_for_rounds, replay_sigma_transcript, verify_range, Commitment, RangeProof, SigmaRound, ALG_RANGE,
    ALG_SIGMA,
};
use crate::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, thiserror::Error)]
pub enum VerifyError {
    #[error("chain-invalid")]
    ChainInvalid,
    #[error("attestation-invalid")]
    AttestationInvalid,
    #[error("revoked")]
    Revoked,
    #[error("revocation-unknown")]
    RevocationUnknown,
    #[error("expired")]
    Expired,
    #[error("ownership-invalid")]
    OwnershipInvalid,
    #[error("proof-failed")]
    ProofFailed,
    #[error("no-attribute")]
    NoAttribute,
    #[error("denied")]
    Denied,
    #[error("timeout")]
    Timeout,
}

impl VerifyError {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        use VerifyError::*;
        [
            ChainInvalid,
            AttestationInvalid,
            Revoked,
            RevocationUnknown,
            Expired,
            OwnershipInvalid,
            ProofFailed,
            NoAttribute,
            Denied,
            Timeout,
        ]
        .get(c as usize)
        .copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub accepted: bool,
    pub confidence: f64,
    pub error: Option<VerifyError>,
}

impl Outcome {
    pub fn failed(error: VerifyError) -> Self {
        Outcome { accepted: false, confidence: 0.0, error: Some(error) }
    }

    pub fn to_bytes(&self) -> [u8; 10] {
        let mut out = [0u8; 10];
        out[0] = self.accepted as u8;
        out[1..9].copy_from_slice(&self.confidence.to_bits().to_be_bytes());
        out[9] = self.error.map(|e| e.code() + 1).unwrap_or(0);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        if b.len() != 10 || b[0] > 1 {
            return None;
        }
        let error = match b[9] {
            0 => None,
            c => Some(VerifyError::from_code(c - 1)?),
        };
        Some(Outcome { accepted: b[0] == 1, confidence: f64::from_bits(u64::from_be_bytes(b[1..9].try_into().ok()?)), error })
    }
}

/// What the verifier asks for (flow B.1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationRequest {
    pub request_id: u64,
    pub verifier: PublicKey,
    pub pseudonym: PublicKey,
    pub triple: Triple,
    /// Inclusive bounds for range-proof algorithms.
    pub range: Option<(u64, u64)>,
    pub rounds: u32,
    pub nonce: [u8; 32],
}

impl VerificationRequest {
    pub fn write(&self, w: &mut Writer) {
        w.u64(self.request_id)
            .key(&self.verifier)
            .key(&self.pseudonym)
            .str(&self.triple.name)
            .str(&self.triple.algorithm)
            .str(&self.triple.version);
        match self.range {
            Some((a, b)) => w.u8(1).u64(a).u64(b),
            None => w.u8(0),
        };
        w.u32(self.rounds).raw(&self.nonce);
    }

    pub fn read(r: &mut Reader<'_>) -> Option<Self> {
        let request_id = r.u64()?;
        let verifier = r.key()?;
        let pseudonym = r.key()?;
        let triple = Triple { name: r.string()?, algorithm: r.string()?, version: r.string()? };
        let range = match r.u8()? {
            0 => None,
            1 => Some((r.u64()?, r.u64()?)),
            _ => return None,
        };
        Some(VerificationRequest { request_id, verifier, pseudonym, triple, range, rounds: r.u32()?, nonce: r.array()? })
    }
}

/// What the subject shares on approval (flow B.2): metadata, the chain up to
/// and including the attribute, its attestations, and the single commitment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Disclosure {
    pub request_id: u64,
    pub metadata: Metadata,
    pub chain: Vec<Attribute>,
    pub attestations: Vec<Attestation>,
    pub commitment: [u8; 32],
    pub ownership: Signature,
    pub range_proof: Option<RangeProof>,
}

impl Disclosure {
    pub fn write(&self, w: &mut Writer) {
        w.u64(self.request_id).bytes(&self.metadata.to_bytes()).u32(self.chain.len() as u32);
        for a in &self.chain {
            w.raw(&a.to_bytes());
        }
        w.u32(self.attestations.len() as u32);
        for a in &self.attestations {
            w.raw(&a.to_bytes());
        }
        w.raw(&self.commitment).sig(&self.ownership);
        match &self.range_proof {
            Some(p) => w.u8(1).bytes(&p.to_bytes()),
            None => w.u8(0),
        };
    }

    pub fn read(r: &mut Reader<'_>) -> Option<Self> {
        let request_id = r.u64()?;
        let metadata = Metadata::from_bytes(r.bytes()?)?;
        let n = r.u32()? as usize;
        let chain = (0..n).map(|_| Attribute::from_bytes(r.take(64)?)).collect::<Option<Vec<_>>>()?;
        let m = r.u32()? as usize;
        let attestations =
            (0..m).map(|_| Attestation::from_bytes(r.take(Attestation::LEN)?)).collect::<Option<Vec<_>>>()?;
        let commitment = r.array()?;
        let ownership = r.sig()?;
        let range_proof = match r.u8()? {
            0 => None,
            1 => Some(RangeProof::from_bytes(r.bytes()?)?),
            _ => return None,
        };
        Some(Disclosure { request_id, metadata, chain, attestations, commitment, ownership, range_proof })
    }
}

/// Verifier-local acceptance policy.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerifierPolicy {
    /// When set, at least one attestation must come from this set.
    pub trusted_attesters: Option<Vec<PublicKey>>,
    /// Accept when a revocation register could not be reached.
    pub accept_unknown_revocation: bool,
}

/// Interactive proof rounds or nothing, depending on the algorithm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProofTranscript {
    Range,
    Sigma(Vec<SigmaRound>),
}

/// Everything the verifier saw during one session.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationInput {
    pub request: VerificationRequest,
    pub disclosure: Disclosure,
    /// Revocation status observed per disclosed attestation, same order.
    pub revocation: Vec<RevocationStatus>,
    pub proof: ProofTranscript,
    pub checked_at: Millis,
}

/// Checks that need no proof interaction, in order: chain, attestations,
/// validity terms, revocation, ownership. Returns the disclosed commitment.
pub fn check_disclosure(
    request: &VerificationRequest,
    disclosure: &Disclosure,
    revocation: &[RevocationStatus],
    now: Millis,
    policy: &VerifierPolicy,
) -> Result<Commitment, VerifyError> {
    let chain = &disclosure.chain;
    let last = chain.last().ok_or(VerifyError::ChainInvalid)?;
    if !verify_chain(&request.pseudonym, chain)
        || disclosure.metadata.attribute_hash != last.hash()
        || sha256(&disclosure.commitment) != last.public_data_hash
        || !disclosure.metadata.matches(&request.triple)
    {
        return Err(VerifyError::ChainInvalid);
    }
    let commitment = Commitment::from_bytes(&disclosure.commitment).ok_or(VerifyError::ChainInvalid)?;

    let metadata_hash = disclosure.metadata.hash();
    let valid: Vec<&Attestation> = disclosure
        .attestations
        .iter()
        .filter(|a| a.metadata_hash == metadata_hash && a.verify())
        .collect();
    if valid.len() != disclosure.attestations.len() || valid.is_empty() {
        return Err(VerifyError::AttestationInvalid);
    }
    if let Some(trusted) = &policy.trusted_attesters {
        if !valid.iter().any(|a| trusted.contains(&a.attester_key)) {
            return Err(VerifyError::AttestationInvalid);
        }
    }

    if !disclosure.metadata.is_valid_at(now) {
        return Err(VerifyError::Expired);
    }

    if revocation.len() != disclosure.attestations.len() {
        return Err(VerifyError::RevocationUnknown);
    }
    let usable = |s: &RevocationStatus| match s {
        RevocationStatus::Valid => true,
        RevocationStatus::Unknown => policy.accept_unknown_revocation,
        RevocationStatus::Revoked | RevocationStatus::Expired => false,
    };
    let surviving: Vec<&Attestation> =
        disclosure.attestations.iter().zip(revocation).filter(|(_, s)| usable(s)).map(|(a, _)| a).collect();
    let trusted_left = match &policy.trusted_attesters {
        Some(t) => surviving.iter().any(|a| t.contains(&a.attester_key)),
        None => !surviving.is_empty(),
    };
    if !trusted_left {
        if revocation.contains(&RevocationStatus::Revoked) {
            return Err(VerifyError::Revoked);
        }
        if revocation.contains(&RevocationStatus::Expired) {
            return Err(VerifyError::Expired);
        }
        return Err(VerifyError::RevocationUnknown);
    }

    if !request.pseudonym.verify(&ownership_message(&request.nonce), &disclosure.ownership) {
        return Err(VerifyError::OwnershipInvalid);
    }
    Ok(commitment)
}

/// Full pipeline over recorded inputs.
pub fn evaluate(input: &VerificationInput, policy: &VerifierPolicy) -> Outcome {
    let commitment =
        match check_disclosure(&input.request, &input.disclosure, &input.revocation, input.checked_at, policy) {
            Ok(c) => c,
            Err(e) => return Outcome::failed(e),
        };
    let algorithm = input.request.triple.algorithm.as_str();
    match (&input.proof, algorithm) {
        (ProofTranscript::Range, ALG_RANGE) => {
            let ok = match (input.request.range, &input.disclosure.range_proof) {
                (Some((a, b)), Some(p)) => verify_range(&commitment, a, b, p),
                _ => false,
            };
            if ok {
                Outcome { accepted: true, confidence: 1.0, error: None }
            } else {
                Outcome::failed(VerifyError::ProofFailed)
            }
        }
        (ProofTranscript::Sigma(rounds), ALG_SIGMA) => {
            let verdict = replay_sigma_transcript(&commitment, input.request.rounds, rounds);
            if verdict.accepted {
                Outcome { accepted: true, confidence: confidence_for_rounds(input.request.rounds), error: None }
            } else {
                Outcome::failed(VerifyError::ProofFailed)
            }
        }
        _ => Outcome::failed(VerifyError::ProofFailed),
    }
}
