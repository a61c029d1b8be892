#![allow(dead_code)]
//! In-process harness: subject, attester and verifier services joined by direct channels.

use ipv8_core::dpki::{generate_keypair, PublicKey};
use ipv8_core::ssi::{AttributeOptions, Channel, IdentityService, Outcome, Pseudonym, SsiAction, SsiConfig, Triple};
use ipv8_core::Hash32;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Rewrites payloads in flight: (from, to, payload) -> payload.
pub type Tamper = Box<dyn FnMut(usize, usize, Vec<u8>) -> Vec<u8>>;

/// Three services wired together over direct channels.
pub struct Trio {
    pub svc: Vec<IdentityService>,
    pub keys: Vec<PublicKey>,
    pub subject_pseudonym: PublicKey,
    pub attester_pseudonym: PublicKey,
    pub tamper: Option<Tamper>,
    pub outcomes: Vec<(u64, Outcome)>,
}

pub const SUBJECT: usize = 0;
pub const ATTESTER: usize = 1;
pub const VERIFIER: usize = 2;

impl Trio {
    pub fn new(auto_approve: bool) -> Self {
        let mut svc = Vec::new();
        let mut keys = Vec::new();
        for i in 0..3u8 {
            let kp = generate_keypair(Some([i + 1; 32]));
            keys.push(kp.public());
            let config = SsiConfig { auto_approve, covert_required: false, ..Default::default() };
            svc.push(IdentityService::new(config, kp, i as u64));
        }
        let subject_pseudonym = svc[SUBJECT].add_pseudonym(Pseudonym::from_keypair(generate_keypair(Some([10; 32]))));
        let attester_pseudonym = svc[ATTESTER].add_pseudonym(Pseudonym::from_keypair(generate_keypair(Some([11; 32]))));
        Trio { svc, keys, subject_pseudonym, attester_pseudonym, tamper: None, outcomes: Vec::new() }
    }

    pub fn channel(&self, to: usize) -> Channel {
        Channel::Direct(self.keys[to])
    }

    pub fn index(&self, key: &PublicKey) -> usize {
        self.keys.iter().position(|k| k == key).expect("known peer")
    }

    /// Delivers queued payloads until everyone is quiet.
    pub fn pump(&mut self) {
        loop {
            let mut moved = false;
            for from in 0..3 {
                for act in self.svc[from].drain_actions() {
                    match act {
                        SsiAction::Send { channel: Channel::Direct(to), mut payload } => {
                            let to = self.index(&to);
                            if let Some(t) = &mut self.tamper {
                                payload = t(from, to, payload);
                            }
                            let back = Channel::Direct(self.keys[from]);
                            self.svc[to].handle(0, back, &payload);
                            moved = true;
                        }
                        SsiAction::Completed { request_id, outcome } => self.outcomes.push((request_id, outcome)),
                        _ => {}
                    }
                }
            }
            if !moved {
                return;
            }
        }
    }

    pub fn add(&mut self, name: &str, algorithm: &str, value: u64) -> Hash32 {
        let sp = self.subject_pseudonym;
        let mut rng = ChaCha20Rng::seed_from_u64(value);
        let p = self.svc[SUBJECT].pseudonym_mut(&sp).unwrap();
        p.add_attribute(name, algorithm, "1", value, AttributeOptions::default(), &mut rng).unwrap().0.hash()
    }

    pub fn attest(&mut self, attr: &Hash32) {
        let (sp, ap, ch) = (self.subject_pseudonym, self.attester_pseudonym, self.channel(ATTESTER));
        self.svc[SUBJECT].request_attestation(ch, &sp, ap, attr).unwrap();
        self.pump();
    }

    pub fn verify(&mut self, name: &str, algorithm: &str, range: Option<(u64, u64)>, rounds: u32) -> Option<Outcome> {
        let (sp, ch) = (self.subject_pseudonym, self.channel(SUBJECT));
        let rid = self.svc[VERIFIER].request_verification(0, ch, sp, Triple::new(name, algorithm, "1"), range, rounds).unwrap();
        self.pump();
        self.outcomes.iter().find(|(r, _)| *r == rid).map(|(_, o)| *o)
    }
}

