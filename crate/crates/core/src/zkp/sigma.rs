//! Interactive proof of knowledge of a commitment opening.
//!
//! Each round: the prover sends `T = t1*G + t2*H`, the verifier answers with a
//! single challenge bit `c`, and the prover responds with `s1 = t1 + c*v`,
//! `s2 = t2 + c*r`. The verifier checks `s1*G + s2*H == T + c*C`. A prover
//! without the opening survives a round with probability 1/2, so `k` rounds
//! give soundness error `2^-k`.

use curve25519_dalek::ristretto::RistrettoPoint;
use curve25519_dalek::scalar::Scalar;
use rand::{CryptoRng, Rng, RngCore};

use super::{generators, read_point, read_scalar, Commitment, Opening, ZkpError};
use crate::Millis;

/// Nine rounds: confidence 1 - 2^-9 ~ 0.998.
pub const DEFAULT_ROUNDS: u32 = 9;

pub fn confidence_for_rounds(rounds: u32) -> f64 {
    1.0 - 0.5f64.powi(rounds as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SigmaCommit {
    pub round: u32,
    pub t: [u8; 32],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SigmaChallenge {
    pub round: u32,
    pub bit: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SigmaResponse {
    pub round: u32,
    pub s1: [u8; 32],
    pub s2: [u8; 32],
}

impl SigmaCommit {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = self.round.to_be_bytes().to_vec();
        v.extend_from_slice(&self.t);
        v
    }
    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        (b.len() == 36).then(|| SigmaCommit { round: u32::from_be_bytes(b[..4].try_into().unwrap()), t: b[4..].try_into().unwrap() })
    }
}

impl SigmaChallenge {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = self.round.to_be_bytes().to_vec();
        v.push(self.bit);
        v
    }
    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        (b.len() == 5).then(|| SigmaChallenge { round: u32::from_be_bytes(b[..4].try_into().unwrap()), bit: b[4] })
    }
}

impl SigmaResponse {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = self.round.to_be_bytes().to_vec();
        v.extend_from_slice(&self.s1);
        v.extend_from_slice(&self.s2);
        v
    }
    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        (b.len() == 68).then(|| SigmaResponse {
            round: u32::from_be_bytes(b[..4].try_into().unwrap()),
            s1: b[4..36].try_into().unwrap(),
            s2: b[36..68].try_into().unwrap(),
        })
    }
}

/// One completed round, as kept for offline replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SigmaRound {
    pub t: [u8; 32],
    pub bit: u8,
    pub s1: [u8; 32],
    pub s2: [u8; 32],
}

impl SigmaRound {
    pub const LEN: usize = 97;

    pub fn to_bytes(&self) -> [u8; Self::LEN] {
        let mut out = [0u8; Self::LEN];
        out[..32].copy_from_slice(&self.t);
        out[32] = self.bit;
        out[33..65].copy_from_slice(&self.s1);
        out[65..].copy_from_slice(&self.s2);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        (b.len() == Self::LEN).then(|| SigmaRound {
            t: b[..32].try_into().unwrap(),
            bit: b[32],
            s1: b[33..65].try_into().unwrap(),
            s2: b[65..].try_into().unwrap(),
        })
    }

    pub fn check(&self, commitment: &Commitment) -> bool {
        check_round(commitment, &self.t, self.bit, &self.s1, &self.s2)
    }
}

fn check_round(commitment: &Commitment, t: &[u8; 32], bit: u8, s1: &[u8; 32], s2: &[u8; 32]) -> bool {
    if bit > 1 {
        return false;
    }
    let (Some(t), Some(s1), Some(s2)) = (read_point(t), read_scalar(s1), read_scalar(s2)) else {
        return false;
    };
    let gens = generators();
    let rhs: RistrettoPoint = if bit == 1 { t + commitment.0 } else { t };
    s1 * gens.g + s2 * gens.h == rhs
}

/// Recomputes the verdict of a recorded session.
pub fn replay_sigma_transcript(commitment: &Commitment, rounds: u32, transcript: &[SigmaRound]) -> Verdict {
    let failures = transcript.iter().filter(|r| !r.check(commitment)).count() as u32;
    let completed = transcript.len() as u32;
    Verdict {
        accepted: failures == 0 && completed == rounds,
        confidence: confidence_for_rounds(rounds),
        rounds,
    }
}

/// Prover side; holds the opening.
#[derive(Debug, Clone)]
pub struct SigmaProver {
    opening: Opening,
    round: u32,
    nonce: Option<(Scalar, Scalar)>,
}

impl SigmaProver {
    pub fn new(opening: Opening) -> Self {
        SigmaProver { opening, round: 0, nonce: None }
    }

    /// Produces the first message of the next round.
    pub fn commit_round<R: RngCore + CryptoRng>(&mut self, rng: &mut R) -> SigmaCommit {
        let gens = generators();
        let (t1, t2) = (Scalar::random(rng), Scalar::random(rng));
        self.nonce = Some((t1, t2));
        SigmaCommit { round: self.round, t: (t1 * gens.g + t2 * gens.h).compress().to_bytes() }
    }

    pub fn respond(&mut self, challenge: &SigmaChallenge) -> Result<SigmaResponse, ZkpError> {
        if challenge.round != self.round || challenge.bit > 1 {
            return Err(ZkpError::OutOfOrder);
        }
        let (t1, t2) = self.nonce.take().ok_or(ZkpError::OutOfOrder)?;
        let c = Scalar::from(challenge.bit as u64);
        let s1 = t1 + c * Scalar::from(self.opening.value);
        let s2 = t2 + c * self.opening.randomness;
        self.round += 1;
        Ok(SigmaResponse { round: challenge.round, s1: s1.to_bytes(), s2: s2.to_bytes() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Open,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub accepted: bool,
    pub confidence: f64,
    pub rounds: u32,
}

/// Verifier side of a multi-round session.
#[derive(Debug, Clone)]
pub struct InteractiveSession {
    pub rounds: u32,
    pub completed: u32,
    pub failures: u32,
    pub state: SessionState,
    commitment: Commitment,
    pending: Option<([u8; 32], u8)>,
    deadline: Option<Millis>,
    transcript: Vec<SigmaRound>,
}

impl InteractiveSession {
    pub fn new(commitment: Commitment, rounds: u32) -> Self {
        InteractiveSession {
            rounds: rounds.max(1),
            completed: 0,
            failures: 0,
            state: SessionState::Open,
            commitment,
            pending: None,
            deadline: None,
            transcript: Vec::new(),
        }
    }

    pub fn with_deadline(mut self, deadline: Millis) -> Self {
        self.deadline = Some(deadline);
        self
    }

    /// Accepts the prover's round commitment and draws the challenge bit.
    pub fn challenge<R: RngCore>(&mut self, commit: &SigmaCommit, rng: &mut R) -> Result<SigmaChallenge, ZkpError> {
        if self.state != SessionState::Open {
            return Err(ZkpError::SessionClosed);
        }
        if self.pending.is_some() || commit.round != self.completed {
            self.state = SessionState::Rejected;
            return Err(ZkpError::OutOfOrder);
        }
        let bit = rng.gen_range(0..=1u8);
        self.pending = Some((commit.t, bit));
        Ok(SigmaChallenge { round: commit.round, bit })
    }

    /// Checks a response. Any failed round rejects the session.
    pub fn check_response(&mut self, response: &SigmaResponse) -> Result<SessionState, ZkpError> {
        if self.state != SessionState::Open {
            return Err(ZkpError::SessionClosed);
        }
        let Some((t, bit)) = self.pending.take().filter(|_| response.round == self.completed) else {
            self.state = SessionState::Rejected;
            return Err(ZkpError::OutOfOrder);
        };
        let round = SigmaRound { t, bit, s1: response.s1, s2: response.s2 };
        self.transcript.push(round);
        self.completed += 1;
        if !round.check(&self.commitment) {
            self.failures += 1;
            self.state = SessionState::Rejected;
        } else if self.completed == self.rounds {
            self.state = SessionState::Accepted;
        }
        Ok(self.state)
    }

    /// Rejects an open session whose deadline has passed.
    pub fn poll_timeout(&mut self, now: Millis) -> SessionState {
        if self.state == SessionState::Open && self.deadline.is_some_and(|d| now >= d) {
            self.state = SessionState::Rejected;
        }
        self.state
    }

    pub fn verdict(&self) -> Verdict {
        Verdict {
            accepted: self.state == SessionState::Accepted && self.failures == 0 && self.completed == self.rounds,
            confidence: confidence_for_rounds(self.rounds),
            rounds: self.rounds,
        }
    }

    pub fn transcript(&self) -> &[SigmaRound] {
        &self.transcript
    }

    pub fn commitment(&self) -> &Commitment {
        &self.commitment
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zkp::{commit, Domain};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn run_honest(rounds: u32, seed: u64) -> (InteractiveSession, Commitment) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (c, o) = commit(25, None, Domain::default(), &mut rng).unwrap();
        let mut prover = SigmaProver::new(o);
        let mut session = InteractiveSession::new(c, rounds);
        while session.state == SessionState::Open {
            let m = prover.commit_round(&mut rng);
            let ch = session.challenge(&m, &mut rng).unwrap();
            let r = prover.respond(&ch).unwrap();
            session.check_response(&r).unwrap();
        }
        (session, c)
    }

    #[test]
    fn honest_nine_rounds() {
        let (s, c) = run_honest(DEFAULT_ROUNDS, 1);
        let v = s.verdict();
        assert!(v.accepted);
        assert!((v.confidence - 0.998).abs() < 5e-4);
        assert_eq!(replay_sigma_transcript(&c, 9, s.transcript()), v);
    }

    #[test]
    fn honest_single_round() {
        let (s, _) = run_honest(1, 2);
        assert!(s.verdict().accepted);
        assert_eq!(s.verdict().confidence, 0.5);
    }

    #[test]
    fn response_before_commit_rejects() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (c, _) = commit(1, None, Domain::default(), &mut rng).unwrap();
        let mut s = InteractiveSession::new(c, 9);
        let bogus = SigmaResponse { round: 0, s1: [0; 32], s2: [0; 32] };
        assert_eq!(s.check_response(&bogus), Err(ZkpError::OutOfOrder));
        assert_eq!(s.state, SessionState::Rejected);
        assert!(!s.verdict().accepted);
    }

    #[test]
    fn timeout_rejects() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let (c, _) = commit(1, None, Domain::default(), &mut rng).unwrap();
        let mut s = InteractiveSession::new(c, 9).with_deadline(1000);
        assert_eq!(s.poll_timeout(999), SessionState::Open);
        assert_eq!(s.poll_timeout(1000), SessionState::Rejected);
    }

    #[test]
    fn wrong_opening_fails_on_challenge_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let (c, _) = commit(25, None, Domain::default(), &mut rng).unwrap();
        let (_, wrong) = commit(26, None, Domain::default(), &mut rng).unwrap();
        let mut prover = SigmaProver::new(wrong);
        let mut session = InteractiveSession::new(c, 64);
        while session.state == SessionState::Open {
            let m = prover.commit_round(&mut rng);
            let ch = session.challenge(&m, &mut rng).unwrap();
            let r = prover.respond(&ch).unwrap();
            session.check_response(&r).unwrap();
        }
        assert_eq!(session.state, SessionState::Rejected);
        assert_eq!(session.transcript().last().unwrap().bit, 1);
    }

    #[test]
    fn message_codecs() {
        let m = SigmaCommit { round: 3, t: [7; 32] };
        assert_eq!(SigmaCommit::from_bytes(&m.to_bytes()), Some(m));
        let c = SigmaChallenge { round: 3, bit: 1 };
        assert_eq!(SigmaChallenge::from_bytes(&c.to_bytes()), Some(c));
        let r = SigmaResponse { round: 3, s1: [1; 32], s2: [2; 32] };
        assert_eq!(SigmaResponse::from_bytes(&r.to_bytes()), Some(r));
    }
}
