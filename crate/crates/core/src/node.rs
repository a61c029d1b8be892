//! One full stack behind a single datagram interface. Sans-IO: callers feed
//! datagrams and clock ticks in and drain `(address, bytes)` pairs out.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand_chacha::ChaCha20Rng;

use crate::anon::{Anon, AnonConfig, AnonError, AnonEvent, Cell, RendezvousInfo};
use crate::dpki::{KeyPair, PublicKey};
use crate::overlay::{
    rng_from_seed, DiscoveryMessage, GossipItem, Overlay, OverlayConfig, OverlayEvent, GOSSIP_RENDEZVOUS,
    GOSSIP_REVOCATION,
};
use crate::ssi::{Attestation, Channel, IdentityService, Outcome, SsiAction, SsiConfig};
use crate::store::{revoke, RegisterRequest, RegisterResponse, RevocationEntry, RevocationMode, RevocationSet, StoreError};
use crate::wire::{decode_envelope, encode_envelope, Message, OverlayId, TransportAddress};
use crate::{Hash32, Millis};

pub const OVERLAY_DISCOVERY: &str = "discovery";
pub const OVERLAY_TUNNEL: &str = "tunnel";
pub const OVERLAY_IDENTITY: &str = "identity";
pub const OVERLAY_REVOCATION: &str = "revocation";

pub const MSG_REGISTER_REQUEST: u8 = 0x20;
pub const MSG_REGISTER_RESPONSE: u8 = 0x21;
pub const MSG_IDENTITY_DIRECT: u8 = 0x30;

/// Largest identity fragment sent in one channel cell.
const CHANNEL_CHUNK: usize = 60_000;

#[derive(Debug, Clone, Default)]
pub struct NodeConfig {
    pub overlay: OverlayConfig,
    pub anon: AnonConfig,
    pub ssi: SsiConfig,
    /// Serve as a mode-1 revocation register.
    pub register_role: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeEvent {
    Overlay(OverlayEvent),
    Anon(AnonEvent),
    Verified { request_id: u64, outcome: Outcome },
    Attested { request_id: u64, attestation: Attestation },
    RendezvousLearned(PublicKey),
    /// A revocation entry became known here, over gossip or locally.
    RevocationSeen { metadata_hash: Hash32, attester: PublicKey, at: Millis },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeStats {
    pub dispatched: u64,
    pub undecodable: u64,
    pub blacklisted: u64,
    pub sent: u64,
    pub bytes_sent: u64,
}

struct OverlayIds {
    discovery: OverlayId,
    tunnel: OverlayId,
    identity: OverlayId,
    revocation: OverlayId,
}

pub struct Node {
    keypair: KeyPair,
    seq: u64,
    ids: OverlayIds,
    known: HashSet<OverlayId>,
    pub overlay: Overlay,
    pub anon: Anon,
    pub ssi: IdentityService,
    /// Hidden-service descriptors learned from gossip.
    pub rendezvous: BTreeMap<PublicKey, RendezvousInfo>,
    /// Where direct identity traffic to a key goes.
    pub contacts: HashMap<PublicKey, TransportAddress>,
    reassembly: HashMap<u64, Vec<u8>>,
    rng: ChaCha20Rng,
    outbox: Vec<(TransportAddress, Vec<u8>)>,
    events: Vec<NodeEvent>,
    pub stats: NodeStats,
    /// Plaintext identity payloads this node sent, when set to `Some`.
    pub ssi_capture: Option<Vec<Vec<u8>>>,
}

impl Node {
    pub fn new(config: NodeConfig, keypair: KeyPair, address: TransportAddress, seed: u64) -> Self {
        let ids = OverlayIds {
            discovery: OverlayId::from_name(OVERLAY_DISCOVERY),
            tunnel: OverlayId::from_name(OVERLAY_TUNNEL),
            identity: OverlayId::from_name(OVERLAY_IDENTITY),
            revocation: OverlayId::from_name(OVERLAY_REVOCATION),
        };
        let known = [ids.discovery, ids.tunnel, ids.identity, ids.revocation].into_iter().collect();
        let mut ssi = IdentityService::new(config.ssi, keypair.clone(), seed ^ 0x5151);
        if config.register_role {
            ssi.register = Some(RevocationSet::default());
        }
        Node {
            seq: 0,
            ids,
            known,
            overlay: Overlay::new(config.overlay, keypair.public(), address),
            anon: Anon::new(config.anon, keypair.clone()),
            ssi,
            rendezvous: BTreeMap::new(),
            contacts: HashMap::new(),
            reassembly: HashMap::new(),
            rng: rng_from_seed(seed),
            outbox: Vec::new(),
            events: Vec::new(),
            stats: NodeStats::default(),
            ssi_capture: None,
            keypair,
        }
    }

    pub fn public(&self) -> PublicKey {
        self.keypair.public()
    }

    pub fn keypair(&self) -> &KeyPair {
        &self.keypair
    }

    pub fn address(&self) -> &TransportAddress {
        self.overlay.my_address()
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    pub fn drain_outbox(&mut self) -> Vec<(TransportAddress, Vec<u8>)> {
        std::mem::take(&mut self.outbox)
    }

    pub fn drain_events(&mut self) -> Vec<NodeEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn blacklist(&mut self, key: PublicKey) {
        self.overlay.blacklist(key);
        self.contacts.remove(&key);
    }

    fn send(&mut self, to: TransportAddress, overlay: OverlayId, msg_type: u8, payload: Vec<u8>) {
        self.seq += 1;
        let message = Message { overlay, msg_type, seq: self.seq, payload };
        if let Ok(bytes) = encode_envelope(&message, &self.keypair) {
            self.stats.sent += 1;
            self.stats.bytes_sent += bytes.len() as u64;
            self.outbox.push((to, bytes));
        }
    }

    /// One inbound datagram.
    pub fn handle_datagram(&mut self, now: Millis, from: &TransportAddress, bytes: &[u8]) {
        let Ok(env) = decode_envelope(bytes, &self.known) else {
            self.stats.undecodable += 1;
            return;
        };
        let sender = env.sender_key;
        if self.overlay.blacklist.is_blacklisted(&sender) {
            self.stats.blacklisted += 1;
            return;
        }
        self.stats.dispatched += 1;
        self.overlay.observe(now, &sender, from);
        self.contacts.insert(sender, from.clone());
        if env.overlay == self.ids.discovery {
            if let Some(msg) = DiscoveryMessage::parse(env.msg_type, &env.payload) {
                self.overlay.handle(now, &sender, from, msg, &mut self.rng);
            }
        } else if env.overlay == self.ids.tunnel {
            if let Some(cell) = Cell::from_bytes(&env.payload).filter(|c| c.cell_type == env.msg_type) {
                self.anon.handle_cell(now, &sender, from, cell, &mut self.overlay.table, &mut self.rng);
            }
        } else if env.overlay == self.ids.identity {
            if env.msg_type == MSG_IDENTITY_DIRECT {
                self.ssi.handle(now, Channel::Direct(sender), &env.payload);
            }
        } else if env.overlay == self.ids.revocation {
            match env.msg_type {
                MSG_REGISTER_REQUEST => {
                    if let Some(req) = RegisterRequest::from_bytes(&env.payload) {
                        if let Some(resp) = self.ssi.handle_register_request(now, &req) {
                            let overlay = self.ids.revocation;
                            self.send(from.clone(), overlay, MSG_REGISTER_RESPONSE, resp.to_bytes());
                        }
                    }
                }
                MSG_REGISTER_RESPONSE => {
                    if let Some(resp) = RegisterResponse::from_bytes(&env.payload) {
                        self.ssi.handle_register_response(now, resp);
                    }
                }
                _ => {}
            }
        }
        self.pump(now);
    }

    /// Runs every timer that is due.
    pub fn tick(&mut self, now: Millis) {
        self.overlay.tick(now, &mut self.rng);
        self.anon.tick(now, &mut self.overlay.table, &mut self.rng);
        self.ssi.tick(now);
        self.pump(now);
    }

    pub fn next_deadline(&self) -> Option<Millis> {
        [self.overlay.next_deadline(), self.anon.next_deadline(), self.ssi.next_deadline()].into_iter().flatten().min()
    }

    /// Moves work between layers until nothing is left to do.
    fn pump(&mut self, now: Millis) {
        loop {
            let mut busy = false;
            for ev in self.overlay.drain_events() {
                busy = true;
                self.on_overlay_event(now, ev);
            }
            for ev in self.anon.drain_events() {
                busy = true;
                self.on_anon_event(now, ev);
            }
            for act in self.ssi.drain_actions() {
                busy = true;
                self.on_ssi_action(act);
            }
            for out in self.overlay.drain_out() {
                busy = true;
                let (t, p) = (out.message.msg_type(), out.message.payload());
                let overlay = self.ids.discovery;
                self.send(out.to, overlay, t, p);
            }
            for out in self.anon.drain_out() {
                busy = true;
                let overlay = self.ids.tunnel;
                self.send(out.to, overlay, out.cell.cell_type, out.cell.to_bytes());
            }
            if !busy {
                break;
            }
        }
    }

    fn on_overlay_event(&mut self, now: Millis, ev: OverlayEvent) {
        if let OverlayEvent::Gossip(item) = &ev {
            match item.payload.split_first() {
                Some((&GOSSIP_RENDEZVOUS, body)) => {
                    if let Some(info) = RendezvousInfo::from_bytes(body) {
                        let key = info.service_key;
                        self.rendezvous.insert(key, info);
                        self.events.push(NodeEvent::RendezvousLearned(key));
                    }
                }
                Some((&GOSSIP_REVOCATION, body)) => {
                    if let Some(entry) = RevocationEntry::from_bytes(body) {
                        self.accept_revocation(now, &entry);
                    }
                }
                _ => {}
            }
        }
        self.events.push(NodeEvent::Overlay(ev));
    }

    fn accept_revocation(&mut self, now: Millis, entry: &RevocationEntry) {
        if let Ok(true) = self.ssi.shared_log.insert(entry, now) {
            self.events.push(NodeEvent::RevocationSeen {
                metadata_hash: entry.metadata_hash,
                attester: entry.attester_key,
                at: now,
            });
        }
    }

    fn on_anon_event(&mut self, now: Millis, ev: AnonEvent) {
        if let AnonEvent::ChannelData { channel, data } = &ev {
            if let Some((&more, chunk)) = data.split_first() {
                let buf = self.reassembly.entry(*channel).or_default();
                buf.extend_from_slice(chunk);
                if more == 0 {
                    let full = self.reassembly.remove(channel).unwrap_or_default();
                    self.ssi.handle(now, Channel::Covert(*channel), &full);
                }
            }
            return;
        }
        if let AnonEvent::ChannelFailed { channel, .. } = &ev {
            self.reassembly.remove(channel);
        }
        self.events.push(NodeEvent::Anon(ev));
    }

    fn on_ssi_action(&mut self, act: SsiAction) {
        if let (SsiAction::Send { payload, .. }, Some(cap)) = (&act, &mut self.ssi_capture) {
            cap.push(payload.clone());
        }
        match act {
            SsiAction::Send { channel: Channel::Covert(ch), payload } => {
                let chunks: Vec<&[u8]> = if payload.is_empty() { vec![&[]] } else { payload.chunks(CHANNEL_CHUNK).collect() };
                let last = chunks.len() - 1;
                for (i, c) in chunks.into_iter().enumerate() {
                    let mut frame = vec![u8::from(i != last)];
                    frame.extend_from_slice(c);
                    if self.anon.channel_send(ch, &frame).is_err() {
                        break;
                    }
                }
            }
            SsiAction::Send { channel: Channel::Direct(key), payload } => {
                if let Some(to) = self.contacts.get(&key).cloned() {
                    let overlay = self.ids.identity;
                    self.send(to, overlay, MSG_IDENTITY_DIRECT, payload);
                }
            }
            SsiAction::QueryRegister { to, request } => {
                let overlay = self.ids.revocation;
                self.send(to, overlay, MSG_REGISTER_REQUEST, request.to_bytes());
            }
            SsiAction::Completed { request_id, outcome } => self.events.push(NodeEvent::Verified { request_id, outcome }),
            SsiAction::Attested { request_id, attestation } => {
                self.events.push(NodeEvent::Attested { request_id, attestation })
            }
        }
    }

    /// Opens intro points and gossips the descriptor.
    pub fn publish_hidden_service(&mut self, now: Millis) -> Result<RendezvousInfo, AnonError> {
        let info = self.anon.establish_hidden_service(&mut self.rng)?;
        let mut payload = vec![GOSSIP_RENDEZVOUS];
        payload.extend(info.to_bytes());
        let item = GossipItem::new(&self.keypair, payload);
        self.overlay.gossip_push(item, &mut self.rng);
        self.rendezvous.insert(info.service_key, info.clone());
        self.pump(now);
        Ok(info)
    }

    /// Starts a covert channel to a service whose descriptor we hold.
    pub fn connect_hidden(&mut self, now: Millis, service: &PublicKey) -> Result<u64, AnonError> {
        let info = self.rendezvous.get(service).cloned().ok_or(AnonError::NoIntroductionPoint)?;
        let ch = self.anon.connect_hidden(now, &info, &mut self.overlay.table, &mut self.rng)?;
        self.pump(now);
        Ok(ch)
    }

    /// Originates a signed gossip item; returns its id.
    pub fn gossip(&mut self, now: Millis, payload: Vec<u8>) -> Hash32 {
        let item = GossipItem::new(&self.keypair, payload);
        let id = item.item_id;
        self.overlay.gossip_push(item, &mut self.rng);
        self.pump(now);
        id
    }

    /// Registers a direct contact for out-of-band key exchange.
    pub fn add_contact(&mut self, key: PublicKey, address: TransportAddress) {
        self.contacts.insert(key, address);
    }

    /// Withdraws an attestation. Returns the number of datagrams it caused.
    pub fn revoke(
        &mut self,
        now: Millis,
        attester: &KeyPair,
        attestation: &Attestation,
        mode: RevocationMode,
        register: Option<&TransportAddress>,
    ) -> Result<RevocationEntry, StoreError> {
        let entry = revoke(attester, attestation, now)?;
        match mode {
            RevocationMode::Register => {
                let to = register.ok_or(StoreError::RegisterUnreachable)?.clone();
                let overlay = self.ids.revocation;
                self.send(to, overlay, MSG_REGISTER_REQUEST, RegisterRequest::Submit(entry).to_bytes());
            }
            RevocationMode::SharedLog => {
                self.accept_revocation(now, &entry);
                let mut payload = vec![GOSSIP_REVOCATION];
                payload.extend(entry.to_bytes());
                let item = GossipItem::new(&self.keypair, payload);
                self.overlay.gossip_push(item, &mut self.rng);
            }
            RevocationMode::Validity => {}
        }
        self.pump(now);
        Ok(entry)
    }

    /// Runs a closure against the identity service and flushes its actions.
    pub fn with_ssi<T>(&mut self, now: Millis, f: impl FnOnce(&mut IdentityService) -> T) -> T {
        let r = f(&mut self.ssi);
        self.pump(now);
        r
    }

    /// Same for the anonymity layer.
    pub fn with_anon<T>(&mut self, now: Millis, f: impl FnOnce(&mut Anon, &mut crate::overlay::PeerTable, &mut ChaCha20Rng) -> T) -> T {
        let r = f(&mut self.anon, &mut self.overlay.table, &mut self.rng);
        self.pump(now);
        r
    }
}
