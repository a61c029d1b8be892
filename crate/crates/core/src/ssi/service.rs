//! The identity flows as a message-driven state machine.
//!
//! The service never touches the network. It consumes payloads that arrived on
//! a [`Channel`] and queues [`SsiAction`]s for the node to deliver.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::model::{Attestation, Metadata, Pseudonym, Triple};
use super::verify::{
    check_disclosure, evaluate, Disclosure, Outcome, ProofTranscript, VerificationInput, VerificationRequest,
    VerifierPolicy, VerifyError,
};
use super::SsiError;
use crate::codec::{Reader, Writer};
use crate::dpki::{KeyPair, PublicKey};
use crate::store::{
    declared_modes, record_audit, AuditRecord, RegisterRequest, RegisterResponse, RevocationMode, RevocationSet,
    RevocationStatus, META_REVOCATION_REGISTER,
};
use crate::wire::TransportAddress;
use crate::zkp::{
    prove_range, InteractiveSession, SessionState, SigmaChallenge, SigmaCommit, SigmaProver, SigmaResponse,
    ALG_RANGE, ALG_SIGMA,
};
use crate::Millis;

/// Where a payload came from or goes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    /// An end-to-end channel over two rendezvous-linked circuits.
    Covert(u64),
    /// A plain envelope exchange with a known peer.
    Direct(PublicKey),
}

impl Channel {
    pub fn is_covert(&self) -> bool {
        matches!(self, Channel::Covert(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SsiMessage {
    AttestRequest { request_id: u64, attester: PublicKey, metadata: Metadata },
    /// `None` when the attester declined.
    AttestResponse { request_id: u64, attestation: Option<Attestation> },
    VerifyRequest(VerificationRequest),
    NoAttribute { request_id: u64 },
    Denied { request_id: u64 },
    Disclosure(Disclosure),
    SigmaCommit { request_id: u64, commit: SigmaCommit },
    SigmaChallenge { request_id: u64, challenge: SigmaChallenge },
    SigmaResponse { request_id: u64, response: SigmaResponse },
    Outcome { request_id: u64, outcome: Outcome },
}

impl SsiMessage {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w;
        match self {
            SsiMessage::AttestRequest { request_id, attester, metadata } => {
                w = Writer::with_tag(0x01);
                w.u64(*request_id).key(attester).bytes(&metadata.to_bytes());
            }
            SsiMessage::AttestResponse { request_id, attestation } => {
                w = Writer::with_tag(0x02);
                w.u64(*request_id);
                match attestation {
                    Some(a) => w.u8(1).raw(&a.to_bytes()),
                    None => w.u8(0),
                };
            }
            SsiMessage::VerifyRequest(r) => {
                w = Writer::with_tag(0x03);
                r.write(&mut w);
            }
            SsiMessage::NoAttribute { request_id } => {
                w = Writer::with_tag(0x04);
                w.u64(*request_id);
            }
            SsiMessage::Denied { request_id } => {
                w = Writer::with_tag(0x05);
                w.u64(*request_id);
            }
            SsiMessage::Disclosure(d) => {
                w = Writer::with_tag(0x06);
                d.write(&mut w);
            }
            SsiMessage::SigmaCommit { request_id, commit } => {
                w = Writer::with_tag(0x07);
                w.u64(*request_id).raw(&commit.to_bytes());
            }
            SsiMessage::SigmaChallenge { request_id, challenge } => {
                w = Writer::with_tag(0x08);
                w.u64(*request_id).raw(&challenge.to_bytes());
            }
            SsiMessage::SigmaResponse { request_id, response } => {
                w = Writer::with_tag(0x09);
                w.u64(*request_id).raw(&response.to_bytes());
            }
            SsiMessage::Outcome { request_id, outcome } => {
                w = Writer::with_tag(0x0A);
                w.u64(*request_id).raw(&outcome.to_bytes());
            }
        }
        w.finish()
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        let mut r = Reader::new(b);
        let msg = match r.u8()? {
            0x01 => SsiMessage::AttestRequest {
                request_id: r.u64()?,
                attester: r.key()?,
                metadata: Metadata::from_bytes(r.bytes()?)?,
            },
            0x02 => {
                let request_id = r.u64()?;
                let attestation = match r.u8()? {
                    0 => None,
                    1 => Some(Attestation::from_bytes(r.take(Attestation::LEN)?)?),
                    _ => return None,
                };
                SsiMessage::AttestResponse { request_id, attestation }
            }
            0x03 => SsiMessage::VerifyRequest(VerificationRequest::read(&mut r)?),
            0x04 => SsiMessage::NoAttribute { request_id: r.u64()? },
            0x05 => SsiMessage::Denied { request_id: r.u64()? },
            0x06 => SsiMessage::Disclosure(Disclosure::read(&mut r)?),
            0x07 => SsiMessage::SigmaCommit { request_id: r.u64()?, commit: SigmaCommit::from_bytes(r.rest())? },
            0x08 => {
                SsiMessage::SigmaChallenge { request_id: r.u64()?, challenge: SigmaChallenge::from_bytes(r.rest())? }
            }
            0x09 => SsiMessage::SigmaResponse { request_id: r.u64()?, response: SigmaResponse::from_bytes(r.rest())? },
            0x0A => SsiMessage::Outcome { request_id: r.u64()?, outcome: Outcome::from_bytes(r.rest())? },
            _ => return None,
        };
        r.is_done().then_some(msg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SsiAction {
    Send { channel: Channel, payload: Vec<u8> },
    /// Ask a register node (msg_type 0x20); answer via [`IdentityService::handle_register_response`].
    QueryRegister { to: TransportAddress, request: RegisterRequest },
    /// A verification finished at this verifier.
    Completed { request_id: u64, outcome: Outcome },
    /// An attestation was attached to one of our pseudonyms.
    Attested { request_id: u64, attestation: Attestation },
}

#[derive(Debug, Clone)]
pub struct SsiConfig {
    /// Skip the manual approval step. Tests and experiments only.
    pub auto_approve: bool,
    /// Refuse identity traffic over non-covert channels.
    pub covert_required: bool,
    pub verify_timeout_ms: Millis,
    pub register_timeout_ms: Millis,
    pub policy: VerifierPolicy,
}

impl Default for SsiConfig {
    fn default() -> Self {
        SsiConfig {
            auto_approve: false,
            covert_required: true,
            verify_timeout_ms: 30_000,
            register_timeout_ms: 2_000,
            policy: VerifierPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum PendingKind {
    Verify,
    Attest,
}

/// An incoming request awaiting the user's decision.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PendingRequest {
    pub request_id: u64,
    pub kind: PendingKind,
    #[serde(skip)]
    pub channel: Channel,
    pub pseudonym: PublicKey,
    pub counterparty: Option<PublicKey>,
    pub name: String,
    pub algorithm: String,
    pub version: String,
    pub received_at: Millis,
    #[serde(skip)]
    request: PendingBody,
}

#[derive(Debug, Clone)]
enum PendingBody {
    Verify(VerificationRequest, usize),
    Attest(Metadata),
}

enum VerifierState {
    AwaitDisclosure,
    AwaitRevocation { disclosure: Disclosure, statuses: Vec<RevocationStatus>, queries: HashMap<u64, usize> },
    AwaitSigma { disclosure: Disclosure, revocation: Vec<RevocationStatus>, session: InteractiveSession },
}

struct VerifierSession {
    channel: Channel,
    request: VerificationRequest,
    state: VerifierState,
    deadline: Millis,
}

struct ProverSession {
    channel: Channel,
    prover: SigmaProver,
    rounds: u32,
}

pub struct IdentityService {
    config: SsiConfig,
    verifier_key: KeyPair,
    pseudonyms: Vec<Pseudonym>,
    pending: BTreeMap<u64, PendingRequest>,
    ownership_given: HashSet<(Channel, u64)>,
    provers: HashMap<u64, ProverSession>,
    verifier_sessions: BTreeMap<u64, VerifierSession>,
    attest_requests: HashMap<u64, (Channel, PublicKey)>,
    outcomes: BTreeMap<u64, Outcome>,
    audit: Vec<AuditRecord>,
    /// Mode-2 revocations received over gossip.
    pub shared_log: RevocationSet,
    /// Present when this node acts as a mode-1 register.
    pub register: Option<RevocationSet>,
    query_owner: HashMap<u64, u64>,
    actions: Vec<SsiAction>,
    rng: ChaCha20Rng,
}

impl IdentityService {
    pub fn new(config: SsiConfig, verifier_key: KeyPair, seed: u64) -> Self {
        IdentityService {
            config,
            verifier_key,
            pseudonyms: Vec::new(),
            pending: BTreeMap::new(),
            ownership_given: HashSet::new(),
            provers: HashMap::new(),
            verifier_sessions: BTreeMap::new(),
            attest_requests: HashMap::new(),
            outcomes: BTreeMap::new(),
            audit: Vec::new(),
            shared_log: RevocationSet::default(),
            register: None,
            query_owner: HashMap::new(),
            actions: Vec::new(),
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn config(&self) -> &SsiConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut SsiConfig {
        &mut self.config
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    pub fn add_pseudonym(&mut self, p: Pseudonym) -> PublicKey {
        let key = p.public();
        self.pseudonyms.push(p);
        key
    }

    pub fn pseudonyms(&self) -> &[Pseudonym] {
        &self.pseudonyms
    }

    pub fn pseudonym(&self, key: &PublicKey) -> Option<&Pseudonym> {
        self.pseudonyms.iter().find(|p| p.public() == *key)
    }

    pub fn pseudonym_mut(&mut self, key: &PublicKey) -> Option<&mut Pseudonym> {
        self.pseudonyms.iter_mut().find(|p| p.public() == *key)
    }

    pub fn outstanding(&self) -> Vec<PendingRequest> {
        self.pending.values().cloned().collect()
    }

    pub fn outcome(&self, request_id: u64) -> Option<Outcome> {
        self.outcomes.get(&request_id).copied()
    }

    pub fn outcomes(&self) -> &BTreeMap<u64, Outcome> {
        &self.outcomes
    }

    pub fn audit_records(&self) -> &[AuditRecord] {
        &self.audit
    }

    pub fn drain_actions(&mut self) -> Vec<SsiAction> {
        std::mem::take(&mut self.actions)
    }

    fn send(&mut self, channel: Channel, msg: SsiMessage) {
        self.actions.push(SsiAction::Send { channel, payload: msg.to_bytes() });
    }

    fn fresh_id(&mut self) -> u64 {
        loop {
            let id = self.rng.gen::<u64>();
            if !self.verifier_sessions.contains_key(&id) && !self.attest_requests.contains_key(&id) {
                return id;
            }
        }
    }

    /// Flow A.2, subject side: hand the attribute's metadata to one attester.
    pub fn request_attestation(
        &mut self,
        channel: Channel,
        subject: &PublicKey,
        attester: PublicKey,
        attribute_hash: &crate::Hash32,
    ) -> Result<u64, SsiError> {
        if self.config.covert_required && !channel.is_covert() {
            return Err(SsiError::CovertRequired);
        }
        let metadata = self
            .pseudonym(subject)
            .ok_or(SsiError::UnknownPseudonym)?
            .metadata_for(attribute_hash)
            .ok_or(SsiError::UnknownAttribute)?
            .clone();
        let request_id = self.fresh_id();
        self.attest_requests.insert(request_id, (channel, *subject));
        self.send(channel, SsiMessage::AttestRequest { request_id, attester, metadata });
        Ok(request_id)
    }

    /// Flow B.1, verifier side.
    pub fn request_verification(
        &mut self,
        now: Millis,
        channel: Channel,
        subject: PublicKey,
        triple: Triple,
        range: Option<(u64, u64)>,
        rounds: u32,
    ) -> Result<u64, SsiError> {
        if self.config.covert_required && !channel.is_covert() {
            return Err(SsiError::CovertRequired);
        }
        let request_id = self.fresh_id();
        let mut nonce = [0u8; 32];
        self.rng.fill(&mut nonce);
        let request = VerificationRequest {
            request_id,
            verifier: self.verifier_key.public(),
            pseudonym: subject,
            triple,
            range,
            rounds,
            nonce,
        };
        self.verifier_sessions.insert(
            request_id,
            VerifierSession {
                channel,
                request: request.clone(),
                state: VerifierState::AwaitDisclosure,
                deadline: now + self.config.verify_timeout_ms,
            },
        );
        self.send(channel, SsiMessage::VerifyRequest(request));
        Ok(request_id)
    }

    /// Inbound identity payload.
    pub fn handle(&mut self, now: Millis, channel: Channel, payload: &[u8]) {
        let Some(msg) = SsiMessage::from_bytes(payload) else {
            return;
        };
        if self.config.covert_required && !channel.is_covert() {
            if let SsiMessage::VerifyRequest(r) = &msg {
                let request_id = r.request_id;
                self.send(channel, SsiMessage::Denied { request_id });
            }
            return;
        }
        match msg {
            SsiMessage::AttestRequest { request_id, attester, metadata } => {
                self.on_attest_request(now, channel, request_id, attester, metadata)
            }
            SsiMessage::AttestResponse { request_id, attestation } => {
                let Some((ch, subject)) = self.attest_requests.get(&request_id).copied() else { return };
                if ch != channel {
                    return;
                }
                self.attest_requests.remove(&request_id);
                if let Some(att) = attestation {
                    let ok = self.pseudonym_mut(&subject).map(|p| p.receive_attestation(att).is_ok()).unwrap_or(false);
                    if ok {
                        self.actions.push(SsiAction::Attested { request_id, attestation: att });
                    }
                }
            }
            SsiMessage::VerifyRequest(req) => self.on_verify_request(now, channel, req),
            SsiMessage::NoAttribute { request_id } => self.finish_failed(now, channel, request_id, VerifyError::NoAttribute),
            SsiMessage::Denied { request_id } => self.finish_failed(now, channel, request_id, VerifyError::Denied),
            SsiMessage::Disclosure(d) => self.on_disclosure(now, channel, d),
            SsiMessage::SigmaCommit { request_id, commit } => self.on_sigma_commit(now, channel, request_id, commit),
            SsiMessage::SigmaChallenge { request_id, challenge } => self.on_sigma_challenge(channel, request_id, challenge),
            SsiMessage::SigmaResponse { request_id, response } => self.on_sigma_response(now, channel, request_id, response),
            SsiMessage::Outcome { request_id, .. } => {
                self.provers.remove(&request_id);
            }
        }
    }

    fn on_attest_request(&mut self, now: Millis, channel: Channel, request_id: u64, attester: PublicKey, metadata: Metadata) {
        if self.pseudonym(&attester).is_none() {
            self.send(channel, SsiMessage::AttestResponse { request_id, attestation: None });
            return;
        }
        let pending = PendingRequest {
            request_id,
            kind: PendingKind::Attest,
            channel,
            pseudonym: attester,
            counterparty: None,
            name: metadata.name.clone(),
            algorithm: metadata.algorithm.clone(),
            version: metadata.version.clone(),
            received_at: now,
            request: PendingBody::Attest(metadata),
        };
        self.pending.insert(request_id, pending);
        if self.config.auto_approve {
            let _ = self.allow(now, request_id);
        }
    }

    fn on_verify_request(&mut self, now: Millis, channel: Channel, req: VerificationRequest) {
        let request_id = req.request_id;
        // Ownership is proven once per session; a repeated request is refused.
        if self.ownership_given.contains(&(channel, request_id)) || self.pending.contains_key(&request_id) {
            self.send(channel, SsiMessage::Denied { request_id });
            return;
        }
        let index = self.pseudonym(&req.pseudonym).and_then(|p| p.find_match(&req.triple));
        let Some(index) = index else {
            self.send(channel, SsiMessage::NoAttribute { request_id });
            return;
        };
        let pending = PendingRequest {
            request_id,
            kind: PendingKind::Verify,
            channel,
            pseudonym: req.pseudonym,
            counterparty: Some(req.verifier),
            name: req.triple.name.clone(),
            algorithm: req.triple.algorithm.clone(),
            version: req.triple.version.clone(),
            received_at: now,
            request: PendingBody::Verify(req, index),
        };
        self.pending.insert(request_id, pending);
        if self.config.auto_approve {
            let _ = self.allow(now, request_id);
        }
    }

    /// The manual approval step for either kind of pending request.
    pub fn allow(&mut self, _now: Millis, request_id: u64) -> Result<(), SsiError> {
        let pending = self.pending.remove(&request_id).ok_or(SsiError::UnknownRequest)?;
        let channel = pending.channel;
        match pending.request {
            PendingBody::Attest(metadata) => {
                let attester = self.pseudonym(&pending.pseudonym).ok_or(SsiError::UnknownPseudonym)?;
                let attestation = super::model::attest(attester, &metadata);
                self.send(channel, SsiMessage::AttestResponse { request_id, attestation: Some(attestation) });
            }
            PendingBody::Verify(req, index) => {
                if !self.ownership_given.insert((channel, request_id)) {
                    self.send(channel, SsiMessage::Denied { request_id });
                    return Err(SsiError::OwnershipAlreadyProven);
                }
                let mut rng = ChaCha20Rng::from_rng(&mut self.rng).expect("chacha reseed");
                let p = self.pseudonym_mut(&req.pseudonym).ok_or(SsiError::UnknownPseudonym)?;
                let attr_hash = p.chain()[index].hash();
                p.whitelist(attr_hash, req.verifier);
                let metadata = p.metadata_for(&attr_hash).ok_or(SsiError::UnknownAttribute)?.clone();
                let opening = *p.opening(&attr_hash).ok_or(SsiError::UnknownAttribute)?;
                let commitment = opening.commitment();
                let range_proof = match (req.triple.algorithm.as_str(), req.range) {
                    (ALG_RANGE, Some((a, b))) => match prove_range(&commitment, &opening, a, b, &mut rng) {
                        Ok(proof) => Some(proof),
                        Err(_) => {
                            self.send(channel, SsiMessage::Denied { request_id });
                            return Err(SsiError::ProofRefused);
                        }
                    },
                    _ => None,
                };
                let disclosure = Disclosure {
                    request_id,
                    attestations: p.attestations_for(&metadata.hash()).to_vec(),
                    metadata,
                    chain: p.chain()[..=index].to_vec(),
                    commitment: commitment.to_bytes(),
                    ownership: p.prove_ownership(&req.nonce),
                    range_proof,
                };
                self.send(channel, SsiMessage::Disclosure(disclosure));
                if req.triple.algorithm == ALG_SIGMA {
                    let mut prover = SigmaProver::new(opening);
                    let commit = prover.commit_round(&mut self.rng);
                    self.provers.insert(request_id, ProverSession { channel, prover, rounds: req.rounds.max(1) });
                    self.send(channel, SsiMessage::SigmaCommit { request_id, commit });
                }
            }
        }
        Ok(())
    }

    pub fn deny(&mut self, request_id: u64) -> Result<(), SsiError> {
        let pending = self.pending.remove(&request_id).ok_or(SsiError::UnknownRequest)?;
        match pending.kind {
            PendingKind::Verify => self.send(pending.channel, SsiMessage::Denied { request_id }),
            PendingKind::Attest => {
                self.send(pending.channel, SsiMessage::AttestResponse { request_id, attestation: None })
            }
        }
        Ok(())
    }

    fn on_sigma_challenge(&mut self, channel: Channel, request_id: u64, challenge: SigmaChallenge) {
        let Some(session) = self.provers.get_mut(&request_id) else { return };
        if session.channel != channel {
            return;
        }
        let Ok(response) = session.prover.respond(&challenge) else {
            self.provers.remove(&request_id);
            return;
        };
        let next = (challenge.round + 1 < session.rounds).then(|| session.prover.commit_round(&mut self.rng));
        self.send(channel, SsiMessage::SigmaResponse { request_id, response });
        match next {
            Some(commit) => self.send(channel, SsiMessage::SigmaCommit { request_id, commit }),
            None => {
                self.provers.remove(&request_id);
            }
        }
    }

    fn revocation_plan(&mut self, request_id: u64, disclosure: &Disclosure, now: Millis) -> (Vec<RevocationStatus>, HashMap<u64, usize>) {
        let modes = declared_modes(&disclosure.metadata);
        let register: Option<TransportAddress> =
            disclosure.metadata.extra.get(META_REVOCATION_REGISTER).and_then(|s| s.parse().ok());
        let mut statuses = Vec::with_capacity(disclosure.attestations.len());
        let mut queries = HashMap::new();
        for (i, att) in disclosure.attestations.iter().enumerate() {
            let mut status = RevocationStatus::Valid;
            for mode in &modes {
                let s = match mode {
                    RevocationMode::Register => match register.clone() {
                        Some(to) => {
                            let query_id = self.rng.gen::<u64>();
                            queries.insert(query_id, i);
                            self.query_owner.insert(query_id, request_id);
                            self.actions.push(SsiAction::QueryRegister {
                                to,
                                request: RegisterRequest::Query {
                                    query_id,
                                    metadata_hash: att.metadata_hash,
                                    attester: att.attester_key,
                                },
                            });
                            RevocationStatus::Valid
                        }
                        None => RevocationStatus::Unknown,
                    },
                    m => crate::store::check_revocation_local(att, &disclosure.metadata, *m, &self.shared_log, now),
                };
                status = status.combine(s);
            }
            statuses.push(status);
        }
        (statuses, queries)
    }

    fn on_disclosure(&mut self, now: Millis, channel: Channel, disclosure: Disclosure) {
        let request_id = disclosure.request_id;
        match self.verifier_sessions.get(&request_id) {
            Some(s) if s.channel == channel && matches!(s.state, VerifierState::AwaitDisclosure) => {}
            _ => return,
        }
        let (statuses, queries) = self.revocation_plan(request_id, &disclosure, now);
        if queries.is_empty() {
            self.after_revocation(now, request_id, disclosure, statuses);
        } else {
            let session = self.verifier_sessions.get_mut(&request_id).expect("checked above");
            session.state = VerifierState::AwaitRevocation { disclosure, statuses, queries };
            session.deadline = session.deadline.max(now + self.config.register_timeout_ms);
        }
    }

    /// Register answer routed back by the node.
    pub fn handle_register_response(&mut self, now: Millis, response: RegisterResponse) {
        let Some(request_id) = self.query_owner.remove(&response.query_id) else { return };
        let Some(session) = self.verifier_sessions.get_mut(&request_id) else { return };
        let VerifierState::AwaitRevocation { statuses, queries, .. } = &mut session.state else { return };
        if let Some(i) = queries.remove(&response.query_id) {
            statuses[i] = statuses[i].combine(response.status);
        }
        if queries.is_empty() {
            let state = std::mem::replace(&mut session.state, VerifierState::AwaitDisclosure);
            if let VerifierState::AwaitRevocation { disclosure, statuses, .. } = state {
                self.after_revocation(now, request_id, disclosure, statuses);
            }
        }
    }

    fn after_revocation(&mut self, now: Millis, request_id: u64, disclosure: Disclosure, revocation: Vec<RevocationStatus>) {
        let session = self.verifier_sessions.get_mut(&request_id).expect("live session");
        let checked = check_disclosure(&session.request, &disclosure, &revocation, now, &self.config.policy);
        if session.request.triple.algorithm == ALG_SIGMA {
            if let Ok(commitment) = checked {
                let inner = InteractiveSession::new(commitment, session.request.rounds).with_deadline(session.deadline);
                session.state = VerifierState::AwaitSigma { disclosure, revocation, session: inner };
                return;
            }
        }
        let input = VerificationInput {
            request: session.request.clone(),
            disclosure,
            revocation,
            proof: ProofTranscript::Range,
            checked_at: now,
        };
        self.complete(now, request_id, input);
    }

    fn on_sigma_commit(&mut self, now: Millis, channel: Channel, request_id: u64, commit: SigmaCommit) {
        let Some(s) = self.verifier_sessions.get_mut(&request_id) else { return };
        if s.channel != channel {
            return;
        }
        let VerifierState::AwaitSigma { session, .. } = &mut s.state else { return };
        match session.challenge(&commit, &mut self.rng) {
            Ok(challenge) => self.send(channel, SsiMessage::SigmaChallenge { request_id, challenge }),
            Err(_) => self.finish_sigma(now, request_id),
        }
    }

    fn on_sigma_response(&mut self, now: Millis, channel: Channel, request_id: u64, response: SigmaResponse) {
        let Some(s) = self.verifier_sessions.get_mut(&request_id) else { return };
        if s.channel != channel {
            return;
        }
        let VerifierState::AwaitSigma { session, .. } = &mut s.state else { return };
        match session.check_response(&response) {
            Ok(SessionState::Open) => {}
            _ => self.finish_sigma(now, request_id),
        }
    }

    fn finish_sigma(&mut self, now: Millis, request_id: u64) {
        let Some(s) = self.verifier_sessions.get_mut(&request_id) else { return };
        let state = std::mem::replace(&mut s.state, VerifierState::AwaitDisclosure);
        let VerifierState::AwaitSigma { disclosure, revocation, session } = state else { return };
        let input = VerificationInput {
            request: s.request.clone(),
            disclosure,
            revocation,
            proof: ProofTranscript::Sigma(session.transcript().to_vec()),
            checked_at: now,
        };
        self.complete(now, request_id, input);
    }

    fn complete(&mut self, now: Millis, request_id: u64, mut input: VerificationInput) {
        let Some(session) = self.verifier_sessions.remove(&request_id) else { return };
        // The audit replays validity at the time the disclosure was checked.
        input.checked_at = input.checked_at.min(now);
        let outcome = evaluate(&input, &self.config.policy);
        let mut session_id = [0u8; 16];
        session_id[..8].copy_from_slice(&request_id.to_be_bytes());
        self.rng.fill(&mut session_id[8..]);
        let record = record_audit(&self.verifier_key, session_id, input, self.config.policy.clone(), outcome, now);
        self.audit.push(record);
        self.outcomes.insert(request_id, outcome);
        self.send(session.channel, SsiMessage::Outcome { request_id, outcome });
        self.actions.push(SsiAction::Completed { request_id, outcome });
    }

    fn finish_failed(&mut self, _now: Millis, channel: Channel, request_id: u64, error: VerifyError) {
        match self.verifier_sessions.get(&request_id) {
            Some(s) if s.channel == channel => {}
            _ => return,
        }
        self.verifier_sessions.remove(&request_id);
        let outcome = Outcome::failed(error);
        self.outcomes.insert(request_id, outcome);
        self.actions.push(SsiAction::Completed { request_id, outcome });
    }

    /// Expires sessions and register queries.
    pub fn tick(&mut self, now: Millis) {
        let due: Vec<u64> =
            self.verifier_sessions.iter().filter(|(_, s)| now >= s.deadline).map(|(id, _)| *id).collect();
        for request_id in due {
            let waiting_register = matches!(
                self.verifier_sessions.get(&request_id).map(|s| &s.state),
                Some(VerifierState::AwaitRevocation { .. })
            );
            if waiting_register {
                let s = self.verifier_sessions.get_mut(&request_id).expect("present");
                let state = std::mem::replace(&mut s.state, VerifierState::AwaitDisclosure);
                s.deadline = now + self.config.verify_timeout_ms;
                if let VerifierState::AwaitRevocation { disclosure, mut statuses, queries } = state {
                    for (q, i) in queries {
                        self.query_owner.remove(&q);
                        statuses[i] = statuses[i].combine(RevocationStatus::Unknown);
                    }
                    self.after_revocation(now, request_id, disclosure, statuses);
                }
                continue;
            }
            let sigma = matches!(
                self.verifier_sessions.get(&request_id).map(|s| &s.state),
                Some(VerifierState::AwaitSigma { .. })
            );
            if sigma {
                self.finish_sigma(now, request_id);
            } else if self.verifier_sessions.remove(&request_id).is_some() {
                let outcome = Outcome::failed(VerifyError::Timeout);
                self.outcomes.insert(request_id, outcome);
                self.actions.push(SsiAction::Completed { request_id, outcome });
            }
        }
    }

    /// Earliest session deadline, for the node's timer.
    pub fn next_deadline(&self) -> Option<Millis> {
        self.verifier_sessions.values().map(|s| s.deadline).min()
    }

    /// Register role (mode 1): accept a submission or answer a query.
    pub fn handle_register_request(&mut self, now: Millis, request: &RegisterRequest) -> Option<RegisterResponse> {
        let register = self.register.as_mut()?;
        match request {
            RegisterRequest::Submit(entry) => {
                let _ = register.insert(entry, now);
                None
            }
            RegisterRequest::Query { query_id, metadata_hash, attester } => Some(RegisterResponse {
                query_id: *query_id,
                status: if register.is_revoked(metadata_hash, attester) {
                    RevocationStatus::Revoked
                } else {
                    RevocationStatus::Valid
                },
            }),
        }
    }
}
