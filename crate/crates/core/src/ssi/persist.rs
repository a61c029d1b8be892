//! Append-only pseudonym storage: chain entries with their metadata and
//! encrypted openings, plus received attestations. The key lives elsewhere.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use sha2::Sha256;

use super::model::{Attestation, Attribute, Metadata, Pseudonym};
use super::SsiError;
use crate::codec::{Reader, Writer};
use crate::dpki::KeyPair;
use crate::zkp::Opening;

const TAG_ATTRIBUTE: u8 = 1;
const TAG_ATTESTATION: u8 = 2;

pub struct PseudonymFile {
    path: PathBuf,
    cipher: ChaCha20Poly1305,
}

fn opening_nonce(attribute_hash: &[u8; 32]) -> Nonce {
    *Nonce::from_slice(&attribute_hash[..12])
}

impl PseudonymFile {
    /// Opens or creates the file and rebuilds the pseudonym it describes.
    pub fn open(path: &Path, keypair: KeyPair) -> Result<(Self, Pseudonym), SsiError> {
        let hk = Hkdf::<Sha256>::new(Some(b"ipv8-pseudonym"), &keypair.seed());
        let mut key = [0u8; 32];
        hk.expand(b"openings", &mut key).expect("valid length");
        let file = PseudonymFile { path: path.to_path_buf(), cipher: ChaCha20Poly1305::new(Key::from_slice(&key)) };
        let mut pseudonym = Pseudonym::from_keypair(keypair);
        if !path.exists() {
            File::create(path)?;
            return Ok((file, pseudonym));
        }
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = Reader::new(&bytes);
        let bad = || SsiError::Storage("corrupt pseudonym file".into());
        while !r.is_done() {
            let tag = r.u8().ok_or_else(bad)?;
            let body = r.bytes().ok_or_else(bad)?;
            let mut b = Reader::new(body);
            match tag {
                TAG_ATTRIBUTE => {
                    let attribute = Attribute::from_bytes(b.take(64).ok_or_else(bad)?).ok_or_else(bad)?;
                    let metadata = Metadata::from_bytes(b.bytes().ok_or_else(bad)?).ok_or_else(bad)?;
                    let sealed = b.rest();
                    let plain =
                        file.cipher.decrypt(&opening_nonce(&attribute.hash()), sealed).map_err(|_| bad())?;
                    let opening = Opening::from_bytes(&plain).ok_or_else(bad)?;
                    pseudonym.restore_attribute(attribute, metadata, opening)?;
                }
                TAG_ATTESTATION => {
                    let att = Attestation::from_bytes(b.rest()).ok_or_else(bad)?;
                    pseudonym.receive_attestation(att)?;
                }
                _ => return Err(bad()),
            }
        }
        Ok((file, pseudonym))
    }

    fn append(&self, tag: u8, body: &[u8]) -> Result<(), SsiError> {
        let rec = Writer::with_tag(tag).bytes(body).finish();
        let mut f = OpenOptions::new().append(true).open(&self.path)?;
        f.write_all(&rec)?;
        f.sync_data()?;
        Ok(())
    }

    pub fn append_attribute(&self, attribute: &Attribute, metadata: &Metadata, opening: &Opening) -> Result<(), SsiError> {
        let sealed = self
            .cipher
            .encrypt(&opening_nonce(&attribute.hash()), opening.to_bytes().as_slice())
            .map_err(|_| SsiError::Storage("encryption failed".into()))?;
        let body = Writer::new().raw(&attribute.to_bytes()).bytes(&metadata.to_bytes()).raw(&sealed).finish();
        self.append(TAG_ATTRIBUTE, &body)
    }

    pub fn append_attestation(&self, attestation: &Attestation) -> Result<(), SsiError> {
        self.append(TAG_ATTESTATION, &attestation.to_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpki::generate_keypair;
    use crate::ssi::attest;
    use crate::zkp::ALG_RANGE;
    use rand::SeedableRng;

    #[test]
    fn reload_restores_chain_and_attestations() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.chain");
        let kp = generate_keypair(Some([4; 32]));
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        let (file, mut p) = PseudonymFile::open(&path, kp.clone()).unwrap();
        let (attr, meta) = p.add_attribute("age", ALG_RANGE, "version 3", 25, Default::default(), &mut rng).unwrap();
        file.append_attribute(&attr, &meta, p.opening(&attr.hash()).unwrap()).unwrap();
        let att = attest(&Pseudonym::create(), &meta);
        p.receive_attestation(att).unwrap();
        file.append_attestation(&att).unwrap();

        let (_, again) = PseudonymFile::open(&path, kp).unwrap();
        assert_eq!(again.chain(), p.chain());
        assert_eq!(again.attestations_for(&meta.hash()), &[att]);
        assert_eq!(again.opening(&attr.hash()).unwrap().value, 25);
    }

    #[test]
    fn wrong_key_cannot_open() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.chain");
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        let (file, mut p) = PseudonymFile::open(&path, generate_keypair(Some([4; 32]))).unwrap();
        let (attr, meta) = p.add_attribute("age", ALG_RANGE, "version 3", 25, Default::default(), &mut rng).unwrap();
        file.append_attribute(&attr, &meta, p.opening(&attr.hash()).unwrap()).unwrap();
        assert!(PseudonymFile::open(&path, generate_keypair(Some([5; 32]))).is_err());
    }
}
