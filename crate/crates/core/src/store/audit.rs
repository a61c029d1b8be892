//! Signed audit records and the verifier-local, hash-linked, encrypted log.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use sha2::{Digest, Sha256};

use super::{RevocationStatus, StoreError};
use crate::codec::{Reader, Writer};
use crate::dpki::{KeyPair, PublicKey, Signature};
use crate::ssi::{
    evaluate, Disclosure, Outcome, ProofTranscript, VerificationInput, VerificationRequest, VerifierPolicy,
};
use crate::zkp::SigmaRound;
use crate::{Hash32, Millis};

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub session_id: [u8; 16],
    pub verifier_key: PublicKey,
    pub subject_key: PublicKey,
    pub input: VerificationInput,
    pub policy: VerifierPolicy,
    pub outcome: Outcome,
    pub timestamp: Millis,
    pub signature: Signature,
}

fn write_policy(w: &mut Writer, p: &VerifierPolicy) {
    w.u8(p.accept_unknown_revocation as u8);
    match &p.trusted_attesters {
        Some(keys) => {
            w.u8(1).u32(keys.len() as u32);
            for k in keys {
                w.key(k);
            }
        }
        None => {
            w.u8(0);
        }
    }
}

fn read_policy(r: &mut Reader<'_>) -> Option<VerifierPolicy> {
    let accept_unknown_revocation = match r.u8()? {
        0 => false,
        1 => true,
        _ => return None,
    };
    let trusted_attesters = match r.u8()? {
        0 => None,
        1 => {
            let n = r.u32()? as usize;
            Some((0..n).map(|_| r.key()).collect::<Option<Vec<_>>>()?)
        }
        _ => return None,
    };
    Some(VerifierPolicy { trusted_attesters, accept_unknown_revocation })
}

fn write_input(w: &mut Writer, input: &VerificationInput) {
    input.request.write(w);
    input.disclosure.write(w);
    w.u32(input.revocation.len() as u32);
    for s in &input.revocation {
        w.u8(s.code());
    }
    match &input.proof {
        ProofTranscript::Range => {
            w.u8(0);
        }
        ProofTranscript::Sigma(rounds) => {
            w.u8(1).u32(rounds.len() as u32);
            for r in rounds {
                w.raw(&r.to_bytes());
            }
        }
    }
    w.u64(input.checked_at);
}

fn read_input(r: &mut Reader<'_>) -> Option<VerificationInput> {
    let request = VerificationRequest::read(r)?;
    let disclosure = Disclosure::read(r)?;
    let n = r.u32()? as usize;
    let revocation = (0..n).map(|_| RevocationStatus::from_code(r.u8()?)).collect::<Option<Vec<_>>>()?;
    let proof = match r.u8()? {
        0 => ProofTranscript::Range,
        1 => {
            let m = r.u32()? as usize;
            ProofTranscript::Sigma(
                (0..m).map(|_| SigmaRound::from_bytes(r.take(SigmaRound::LEN)?)).collect::<Option<Vec<_>>>()?,
            )
        }
        _ => return None,
    };
    Some(VerificationInput { request, disclosure, revocation, proof, checked_at: r.u64()? })
}

impl AuditRecord {
    /// The bytes the verifier signs.
    pub fn body(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(b"ipv8-audit").raw(&self.session_id).key(&self.verifier_key).key(&self.subject_key);
        write_input(&mut w, &self.input);
        write_policy(&mut w, &self.policy);
        w.raw(&self.outcome.to_bytes()).u64(self.timestamp);
        w.finish()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = self.body();
        b.extend_from_slice(&self.signature.0);
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, StoreError> {
        let mut r = Reader::new(b);
        let parse = |r: &mut Reader<'_>| -> Option<AuditRecord> {
            if r.take(10)? != b"ipv8-audit" {
                return None;
            }
            let session_id = r.array()?;
            let verifier_key = r.key()?;
            let subject_key = r.key()?;
            let input = read_input(r)?;
            let policy = read_policy(r)?;
            let outcome = Outcome::from_bytes(r.take(10)?)?;
            let timestamp = r.u64()?;
            let signature = r.sig()?;
            Some(AuditRecord { session_id, verifier_key, subject_key, input, policy, outcome, timestamp, signature })
        };
        let rec = parse(&mut r).ok_or(StoreError::TranscriptIncomplete)?;
        if !r.is_done() {
            return Err(StoreError::TranscriptIncomplete);
        }
        Ok(rec)
    }
}

/// Seals a finished session. The verifier signs everything it saw.
pub fn record_audit(
    verifier: &KeyPair,
    session_id: [u8; 16],
    input: VerificationInput,
    policy: VerifierPolicy,
    outcome: Outcome,
    timestamp: Millis,
) -> AuditRecord {
    let mut rec = AuditRecord {
        session_id,
        verifier_key: verifier.public(),
        subject_key: input.request.pseudonym,
        input,
        policy,
        outcome,
        timestamp,
        signature: Signature([0; 64]),
    };
    rec.signature = verifier.sign(&rec.body());
    rec
}

/// Offline replay: signature, then the full evaluation must give the stored outcome.
pub fn verify_audit(record: &AuditRecord) -> Result<bool, StoreError> {
    if !record.verifier_key.verify(&record.body(), &record.signature) {
        return Err(StoreError::SignatureInvalid);
    }
    if record.subject_key != record.input.request.pseudonym {
        return Ok(false);
    }
    let replay = evaluate(&record.input, &record.policy);
    Ok(replay.accepted == record.outcome.accepted
        && replay.error == record.outcome.error
        && replay.confidence.to_bits() == record.outcome.confidence.to_bits())
}

fn running_hash(prev: &Hash32, sealed: &[u8]) -> Hash32 {
    let mut h = Sha256::new();
    h.update(prev);
    h.update((sealed.len() as u32).to_be_bytes());
    h.update(sealed);
    h.finalize().into()
}

fn log_cipher(owner: &KeyPair) -> ChaCha20Poly1305 {
    let hk = Hkdf::<Sha256>::new(Some(b"ipv8-audit-log"), &owner.seed());
    let mut key = [0u8; 32];
    hk.expand(b"record-key", &mut key).expect("32 bytes is a valid HKDF length");
    ChaCha20Poly1305::new(Key::from_slice(&key))
}

fn record_nonce(index: u64) -> Nonce {
    let mut n = [0u8; 12];
    n[4..].copy_from_slice(&index.to_be_bytes());
    *Nonce::from_slice(&n)
}

/// Append-only audit log. Each entry is `len u32 | sealed record | running hash`;
/// a signed `.head` file next to it pins the record count and final hash.
pub struct AuditLog {
    path: PathBuf,
    cipher: ChaCha20Poly1305,
    owner: KeyPair,
    count: u64,
    head: Hash32,
}

impl AuditLog {
    pub fn head_path(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".head");
        PathBuf::from(p)
    }

    /// Opens (verifying) or creates the log at `path`.
    pub fn open(path: &Path, owner: &KeyPair) -> Result<Self, StoreError> {
        let mut log = AuditLog {
            path: path.to_path_buf(),
            cipher: log_cipher(owner),
            owner: owner.clone(),
            count: 0,
            head: [0; 32],
        };
        if path.exists() {
            let records = log.read_all()?;
            log.count = records.len() as u64;
            log.head = Self::scan(&fs::read(path)?)?.1;
        } else {
            File::create(path)?;
            log.write_head()?;
        }
        Ok(log)
    }

    fn write_head(&self) -> Result<(), StoreError> {
        let body = Writer::new().raw(b"ipv8-audit-head").u64(self.count).raw(&self.head).finish();
        let sig = self.owner.sign(&body);
        let mut out = body;
        out.extend_from_slice(&sig.0);
        fs::write(Self::head_path(&self.path), out)?;
        Ok(())
    }

    pub fn append(&mut self, record: &AuditRecord) -> Result<(), StoreError> {
        let sealed = self
            .cipher
            .encrypt(&record_nonce(self.count), record.to_bytes().as_slice())
            .map_err(|_| StoreError::Corrupt)?;
        let hash = running_hash(&self.head, &sealed);
        let mut f = OpenOptions::new().append(true).open(&self.path)?;
        f.write_all(&(sealed.len() as u32).to_be_bytes())?;
        f.write_all(&sealed)?;
        f.write_all(&hash)?;
        f.sync_data()?;
        self.head = hash;
        self.count += 1;
        self.write_head()
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Splits the file into sealed records, checking every running hash.
    fn scan(bytes: &[u8]) -> Result<(Vec<Vec<u8>>, Hash32), StoreError> {
        let mut r = Reader::new(bytes);
        let mut prev = [0u8; 32];
        let mut out = Vec::new();
        while !r.is_done() {
            let sealed = r.bytes().ok_or(StoreError::Corrupt)?;
            let stored: Hash32 = r.array().ok_or(StoreError::Corrupt)?;
            if running_hash(&prev, sealed) != stored {
                return Err(StoreError::Corrupt);
            }
            prev = stored;
            out.push(sealed.to_vec());
        }
        Ok((out, prev))
    }

    /// Decrypts and verifies every record against the chain and the signed head.
    pub fn read_all(&self) -> Result<Vec<AuditRecord>, StoreError> {
        let mut bytes = Vec::new();
        File::open(&self.path)?.read_to_end(&mut bytes)?;
        let (sealed, last) = Self::scan(&bytes)?;

        let head = fs::read(Self::head_path(&self.path)).map_err(|_| StoreError::Truncated)?;
        let mut r = Reader::new(&head);
        let parsed = (|| {
            if r.take(15)? != b"ipv8-audit-head" {
                return None;
            }
            Some((r.u64()?, r.array::<32>()?, r.sig()?))
        })();
        let (count, hash, sig) = parsed.ok_or(StoreError::Corrupt)?;
        if !self.owner.public().verify(&head[..head.len() - 64], &sig) {
            return Err(StoreError::SignatureInvalid);
        }
        if count != sealed.len() as u64 || hash != last {
            return Err(StoreError::Truncated);
        }

        sealed
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let plain = self.cipher.decrypt(&record_nonce(i as u64), s.as_slice()).map_err(|_| StoreError::Corrupt)?;
                AuditRecord::from_bytes(&plain)
            })
            .collect()
    }
}

/// Opens the log read-only and checks every record offline.
pub fn verify_log_file(path: &Path, owner: &KeyPair) -> Result<usize, StoreError> {
    if !path.exists() {
        return Err(StoreError::Io(std::io::Error::new(std::io::ErrorKind::NotFound, "no such log")));
    }
    let log = AuditLog { path: path.to_path_buf(), cipher: log_cipher(owner), owner: owner.clone(), count: 0, head: [0; 32] };
    let records = log.read_all()?;
    for rec in &records {
        if !verify_audit(rec)? {
            return Err(StoreError::ReplayMismatch);
        }
    }
    Ok(records.len())
}
