//! Non-interactive range proof by bit decomposition.
//!
//! For `a <= v <= b` with `n = bitlen(b - a)`, the prover commits to the bits
//! of `v - a` and of `b - v`, proves each bit commitment opens to 0 or 1 with
//! a two-branch OR proof, and binds everything with one Fiat-Shamir challenge.
//! The verifier checks that the weighted bit commitments recombine to
//! `C - a*G` and `b*G - C` respectively.
//!
//! Transcript layout: `n(1) | e(32) | 2n x [C_i(32) | e0(32) | z0(32) | z1(32)]`.

use curve25519_dalek::ristretto::RistrettoPoint;
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::Identity;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha512};

use super::{generators, read_point, read_scalar, Commitment, Opening, ZkpError};

const BIT_PROOF_LEN: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangeProof {
    pub lower: u64,
    pub upper: u64,
    pub transcript: Vec<u8>,
}

impl RangeProof {
    /// `lower(8) | upper(8) | len(4) | transcript`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.transcript.len());
        out.extend_from_slice(&self.lower.to_be_bytes());
        out.extend_from_slice(&self.upper.to_be_bytes());
        out.extend_from_slice(&(self.transcript.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.transcript);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let lower = u64::from_be_bytes(bytes.get(0..8)?.try_into().ok()?);
        let upper = u64::from_be_bytes(bytes.get(8..16)?.try_into().ok()?);
        let len = u32::from_be_bytes(bytes.get(16..20)?.try_into().ok()?) as usize;
        let transcript = bytes.get(20..20 + len)?.to_vec();
        if bytes.len() != 20 + len {
            return None;
        }
        Some(RangeProof { lower, upper, transcript })
    }
}

fn bit_count(lower: u64, upper: u64) -> usize {
    (64 - (upper - lower).leading_zeros() as usize).max(1)
}

fn pow2(i: usize) -> Scalar {
    Scalar::from(1u128 << i)
}

struct BitWitness {
    commitment: RistrettoPoint,
    bit: bool,
    randomness: Scalar,
}

/// Splits `value` (committed with `randomness`) into `n` bit commitments whose
/// weighted sum reproduces the original commitment.
fn decompose<R: RngCore + CryptoRng>(value: u64, randomness: Scalar, n: usize, rng: &mut R) -> Vec<BitWitness> {
    let gens = generators();
    let mut rs: Vec<Scalar> = (0..n - 1).map(|_| Scalar::random(rng)).collect();
    let partial: Scalar = rs.iter().enumerate().map(|(i, r)| pow2(i) * r).sum();
    rs.push((randomness - partial) * pow2(n - 1).invert());
    rs.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let bit = (value >> i) & 1 == 1;
            let base = if bit { gens.g } else { RistrettoPoint::identity() };
            BitWitness { commitment: base + r * gens.h, bit, randomness: r }
        })
        .collect()
}

fn challenge(commitment: &Commitment, lower: u64, upper: u64, n: usize, points: &[RistrettoPoint]) -> Scalar {
    let mut h = Sha512::new();
    h.update(b"ipv8-zkrp-v1");
    h.update(commitment.to_bytes());
    h.update(lower.to_be_bytes());
    h.update(upper.to_be_bytes());
    h.update([n as u8]);
    for p in points {
        h.update(p.compress().as_bytes());
    }
    Scalar::from_hash(h)
}

/// Proves `lower <= opening.value <= upper`. The prover refuses values outside.
pub fn prove_range<R: RngCore + CryptoRng>(
    commitment: &Commitment,
    opening: &Opening,
    lower: u64,
    upper: u64,
    rng: &mut R,
) -> Result<RangeProof, ZkpError> {
    if lower > upper {
        return Err(ZkpError::InvalidRange);
    }
    if opening.value < lower || opening.value > upper {
        return Err(ZkpError::ValueOutsideRange);
    }
    let gens = generators();
    let n = bit_count(lower, upper);
    let mut witnesses = decompose(opening.value - lower, opening.randomness, n, rng);
    witnesses.extend(decompose(upper - opening.value, -opening.randomness, n, rng));

    // First messages: the real branch gets A = k*H, the other branch is simulated.
    struct Pending {
        k: Scalar,
        e_sim: Scalar,
        z_sim: Scalar,
        a: [RistrettoPoint; 2],
    }
    let pending: Vec<Pending> = witnesses
        .iter()
        .map(|w| {
            let statements = [w.commitment, w.commitment - gens.g];
            let real = w.bit as usize;
            let fake = 1 - real;
            let k = Scalar::random(rng);
            let e_sim = Scalar::random(rng);
            let z_sim = Scalar::random(rng);
            let mut a = [RistrettoPoint::identity(); 2];
            a[real] = k * gens.h;
            a[fake] = z_sim * gens.h - e_sim * statements[fake];
            Pending { k, e_sim, z_sim, a }
        })
        .collect();

    let mut points = Vec::with_capacity(witnesses.len() * 3);
    for (w, p) in witnesses.iter().zip(&pending) {
        points.extend([w.commitment, p.a[0], p.a[1]]);
    }
    let e = challenge(commitment, lower, upper, n, &points);

    let mut transcript = Vec::with_capacity(33 + witnesses.len() * BIT_PROOF_LEN);
    transcript.push(n as u8);
    transcript.extend_from_slice(e.as_bytes());
    for (w, p) in witnesses.iter().zip(&pending) {
        let real = w.bit as usize;
        let e_real = e - p.e_sim;
        let z_real = p.k + e_real * w.randomness;
        let (mut es, mut zs) = ([Scalar::ZERO; 2], [Scalar::ZERO; 2]);
        es[real] = e_real;
        zs[real] = z_real;
        es[1 - real] = p.e_sim;
        zs[1 - real] = p.z_sim;
        transcript.extend_from_slice(w.commitment.compress().as_bytes());
        transcript.extend_from_slice(es[0].as_bytes());
        transcript.extend_from_slice(zs[0].as_bytes());
        transcript.extend_from_slice(zs[1].as_bytes());
    }
    Ok(RangeProof { lower, upper, transcript })
}

/// Pure function of `(commitment, lower, upper, proof)`. Any malformed or
/// inconsistent transcript yields `false`.
pub fn verify_range(commitment: &Commitment, lower: u64, upper: u64, proof: &RangeProof) -> bool {
    verify_inner(commitment, lower, upper, proof).is_some()
}

fn verify_inner(commitment: &Commitment, lower: u64, upper: u64, proof: &RangeProof) -> Option<()> {
    if lower > upper || proof.lower != lower || proof.upper != upper {
        return None;
    }
    let gens = generators();
    let t = &proof.transcript;
    let n = *t.first()? as usize;
    if n != bit_count(lower, upper) || t.len() != 33 + 2 * n * BIT_PROOF_LEN {
        return None;
    }
    let e = read_scalar(&t[1..33])?;

    let mut points = Vec::with_capacity(2 * n * 3);
    let mut bit_commitments = Vec::with_capacity(2 * n);
    for chunk in t[33..].chunks_exact(BIT_PROOF_LEN) {
        let c = read_point(&chunk[0..32])?;
        let e0 = read_scalar(&chunk[32..64])?;
        let z0 = read_scalar(&chunk[64..96])?;
        let z1 = read_scalar(&chunk[96..128])?;
        let e1 = e - e0;
        let a0 = z0 * gens.h - e0 * c;
        let a1 = z1 * gens.h - e1 * (c - gens.g);
        points.extend([c, a0, a1]);
        bit_commitments.push(c);
    }

    let recombine = |bits: &[RistrettoPoint]| -> RistrettoPoint {
        bits.iter().enumerate().map(|(i, c)| pow2(i) * c).sum()
    };
    let low_target = commitment.0 - Scalar::from(lower) * gens.g;
    let high_target = Scalar::from(upper) * gens.g - commitment.0;
    if recombine(&bit_commitments[..n]) != low_target || recombine(&bit_commitments[n..]) != high_target {
        return None;
    }
    (challenge(commitment, lower, upper, n, &points) == e).then_some(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zkp::{commit, Domain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn over_21() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let (c, o) = commit(25, None, Domain::default(), &mut rng).unwrap();
        let proof = prove_range(&c, &o, 21, 120, &mut rng).unwrap();
        assert!(verify_range(&c, 21, 120, &proof));
        assert!(!verify_range(&c, 22, 120, &proof));
    }

    #[test]
    fn under_21_prover_refuses() {
        let mut rng = ChaCha20Rng::seed_from_u64(18);
        let (c, o) = commit(18, None, Domain::default(), &mut rng).unwrap();
        assert_eq!(prove_range(&c, &o, 21, 120, &mut rng), Err(ZkpError::ValueOutsideRange));
    }

    #[test]
    fn degenerate_interval() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (c, o) = commit(21, None, Domain::default(), &mut rng).unwrap();
        let proof = prove_range(&c, &o, 21, 21, &mut rng).unwrap();
        assert!(verify_range(&c, 21, 21, &proof));
    }

    #[test]
    fn full_width_interval() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let (c, o) = commit(u64::MAX - 3, None, Domain::default(), &mut rng).unwrap();
        let proof = prove_range(&c, &o, 0, u64::MAX, &mut rng).unwrap();
        assert_eq!(proof.transcript.len(), 33 + 128 * 128);
        assert!(verify_range(&c, 0, u64::MAX, &proof));
    }

    #[test]
    fn proof_for_other_commitment_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let (c1, o1) = commit(30, None, Domain::default(), &mut rng).unwrap();
        let (c2, _) = commit(30, None, Domain::default(), &mut rng).unwrap();
        let proof = prove_range(&c1, &o1, 21, 120, &mut rng).unwrap();
        assert!(!verify_range(&c2, 21, 120, &proof));
    }

    #[test]
    fn byte_mutations_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let (c, o) = commit(40, None, Domain::default(), &mut rng).unwrap();
        let proof = prove_range(&c, &o, 21, 120, &mut rng).unwrap();
        for _ in 0..200 {
            let mut bad = proof.clone();
            let i = rng.gen_range(0..bad.transcript.len());
            bad.transcript[i] ^= 1 << rng.gen_range(0..8);
            assert!(!verify_range(&c, 21, 120, &bad));
        }
    }

    #[test]
    fn serialization_roundtrip() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let (c, o) = commit(40, None, Domain::default(), &mut rng).unwrap();
        let proof = prove_range(&c, &o, 21, 120, &mut rng).unwrap();
        assert_eq!(RangeProof::from_bytes(&proof.to_bytes()), Some(proof));
        assert_eq!(RangeProof::from_bytes(&[0u8; 5]), None);
    }
}
