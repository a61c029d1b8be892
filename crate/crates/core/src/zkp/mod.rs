//! Pedersen commitments and the two disclosure proofs built on them: a
//! non-interactive range proof and an interactive proof of knowledge of the
//! opening with one-bit challenges.

mod range;
mod sigma;

use std::ops::Add;
use std::sync::OnceLock;

use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::Identity;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256, Sha512};
use thiserror::Error;

pub use range::{prove_range, verify_range, RangeProof};
pub use sigma::{
    confidence_for_rounds, replay_sigma_transcript, InteractiveSession, SessionState, SigmaChallenge,
    SigmaCommit, SigmaProver, SigmaResponse, SigmaRound, Verdict, DEFAULT_ROUNDS,
};

/// Algorithm identifier of the non-interactive range proof, matched byte-exactly.
pub const ALG_RANGE: &str = "ZKRP Peng-Bao";
/// Algorithm identifier of the interactive proof of knowledge.
pub const ALG_SIGMA: &str = "SIGMA-PoK";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ZkpError {
    #[error("value-out-of-domain")]
    ValueOutOfDomain,
    #[error("value-outside-range")]
    ValueOutsideRange,
    #[error("invalid-range: lower bound exceeds upper bound")]
    InvalidRange,
    #[error("malformed-transcript")]
    MalformedTranscript,
    #[error("out-of-order message")]
    OutOfOrder,
    #[error("session closed")]
    SessionClosed,
}

/// Fixed generators with no known discrete-log relation.
pub struct Generators {
    pub g: RistrettoPoint,
    pub h: RistrettoPoint,
}

pub fn generators() -> &'static Generators {
    static GENS: OnceLock<Generators> = OnceLock::new();
    GENS.get_or_init(|| Generators {
        g: RistrettoPoint::hash_from_bytes::<Sha512>(b"ipv8-g"),
        h: RistrettoPoint::hash_from_bytes::<Sha512>(b"ipv8-h"),
    })
}

/// Size of the committed value domain in bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Domain {
    pub bits: u32,
}

impl Default for Domain {
    fn default() -> Self {
        Domain { bits: 64 }
    }
}

impl Domain {
    pub fn contains(&self, value: u128) -> bool {
        self.bits >= 128 || value < (1u128 << self.bits)
    }
}

/// Maps arbitrary attribute data into the 64-bit value domain.
pub fn hash_to_domain(data: &[u8]) -> u64 {
    let d = Sha256::digest(data);
    u64::from_be_bytes(d[..8].try_into().unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Commitment(pub RistrettoPoint);

impl Commitment {
    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.compress().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let c = CompressedRistretto::from_slice(bytes).ok()?;
        c.decompress().map(Commitment)
    }

    pub fn is_identity(&self) -> bool {
        self.0 == RistrettoPoint::identity()
    }
}

impl Add for Commitment {
    type Output = Commitment;
    fn add(self, rhs: Commitment) -> Commitment {
        Commitment(self.0 + rhs.0)
    }
}

/// The prover-side secret behind a commitment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Opening {
    pub value: u64,
    pub randomness: Scalar,
}

impl Opening {
    pub fn commitment(&self) -> Commitment {
        let gens = generators();
        Commitment(Scalar::from(self.value) * gens.g + self.randomness * gens.h)
    }

    pub fn to_bytes(&self) -> [u8; 40] {
        let mut out = [0u8; 40];
        out[..8].copy_from_slice(&self.value.to_be_bytes());
        out[8..].copy_from_slice(self.randomness.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != 40 {
            return None;
        }
        let value = u64::from_be_bytes(bytes[..8].try_into().ok()?);
        let randomness = Option::from(Scalar::from_canonical_bytes(bytes[8..].try_into().ok()?))?;
        Some(Opening { value, randomness })
    }
}

/// Checks `C = g^(a+b) h^(ra+rb)` style sums; openings add component-wise.
pub fn add_openings(a: &Opening, b: &Opening) -> (u128, Scalar) {
    (a.value as u128 + b.value as u128, a.randomness + b.randomness)
}

/// Commits to `value` with the given or fresh randomness.
pub fn commit<R: RngCore + CryptoRng>(
    value: u64,
    randomness: Option<Scalar>,
    domain: Domain,
    rng: &mut R,
) -> Result<(Commitment, Opening), ZkpError> {
    if !domain.contains(value as u128) {
        return Err(ZkpError::ValueOutOfDomain);
    }
    let randomness = randomness.unwrap_or_else(|| Scalar::random(rng));
    let opening = Opening { value, randomness };
    Ok((opening.commitment(), opening))
}

pub(crate) fn read_scalar(bytes: &[u8]) -> Option<Scalar> {
    Option::from(Scalar::from_canonical_bytes(bytes.try_into().ok()?))
}

pub(crate) fn read_point(bytes: &[u8]) -> Option<RistrettoPoint> {
    CompressedRistretto::from_slice(bytes).ok()?.decompress()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(3)
    }

    #[test]
    fn zero_commitment_is_identity() {
        let (c, _) = commit(0, Some(Scalar::ZERO), Domain::default(), &mut rng()).unwrap();
        assert!(c.is_identity());
    }

    #[test]
    fn different_randomness_hides() {
        let mut r = rng();
        let (c1, _) = commit(25, Some(Scalar::random(&mut r)), Domain::default(), &mut r).unwrap();
        let (c2, _) = commit(25, Some(Scalar::random(&mut r)), Domain::default(), &mut r).unwrap();
        assert_ne!(c1, c2);
    }

    #[test]
    fn deterministic_for_fixed_opening() {
        let r = Scalar::from(99u64);
        let (c1, _) = commit(7, Some(r), Domain::default(), &mut rng()).unwrap();
        let (c2, _) = commit(7, Some(r), Domain::default(), &mut rng()).unwrap();
        assert_eq!(c1, c2);
    }

    #[test]
    fn homomorphic_sum_opens_to_sums() {
        let mut r = rng();
        let (ca, oa) = commit(20, None, Domain::default(), &mut r).unwrap();
        let (cb, ob) = commit(5, None, Domain::default(), &mut r).unwrap();
        let (value, randomness) = add_openings(&oa, &ob);
        assert_eq!(value, 25);
        let expected = Opening { value: 25, randomness }.commitment();
        assert_eq!(ca + cb, expected);
    }

    #[test]
    fn domain_is_enforced() {
        let d = Domain { bits: 8 };
        assert_eq!(commit(256, None, d, &mut rng()).unwrap_err(), ZkpError::ValueOutOfDomain);
        assert!(commit(255, None, d, &mut rng()).is_ok());
    }

    #[test]
    fn generators_are_distinct_and_stable() {
        let g = generators();
        assert_ne!(g.g, g.h);
        assert_eq!(g.g, RistrettoPoint::hash_from_bytes::<Sha512>(b"ipv8-g"));
    }

    #[test]
    fn opening_bytes_roundtrip() {
        let (_, o) = commit(123, None, Domain::default(), &mut rng()).unwrap();
        assert_eq!(Opening::from_bytes(&o.to_bytes()), Some(o));
    }
}
