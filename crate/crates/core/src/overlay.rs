//! Peer discovery by random walks, introductions with NAT puncturing,
//! liveness-based eviction, latency probes and push gossip.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::codec::{Reader, Writer};
use crate::dpki::{Blacklist, KeyPair, Peer, PublicKey, Signature};
use crate::wire::TransportAddress;
use crate::{sha256, Hash32, Millis};

pub const MSG_INTRO_REQUEST: u8 = 0x01;
pub const MSG_INTRO_RESPONSE: u8 = 0x02;
pub const MSG_PUNCTURE_REQUEST: u8 = 0x03;
pub const MSG_PUNCTURE: u8 = 0x04;
pub const MSG_PING: u8 = 0x05;
pub const MSG_PONG: u8 = 0x06;
pub const MSG_GOSSIP: u8 = 0x07;

/// First ping after this much silence.
pub const LIVENESS_FIRST_PING_MS: Millis = 30_000;
/// Spacing of the follow-up pings.
pub const LIVENESS_REPING_MS: Millis = 10_000;
pub const LIVENESS_PINGS: u8 = 3;
/// Silence after which a peer is dropped.
pub const LIVENESS_DROP_MS: Millis = 60_000;

#[derive(Debug, Clone)]
pub struct OverlayConfig {
    pub walk_interval_ms: Millis,
    pub neighborhood_target: usize,
    pub connection_cap: usize,
    pub keepalive_prob: f64,
    pub gossip_fanout: usize,
    pub bootstrap: Vec<TransportAddress>,
    /// Periodic random walks. Off for nodes whose tables are set up directly.
    pub walking: bool,
    /// Liveness pings and eviction.
    pub liveness: bool,
    /// Interval between latency probes; 0 disables probing.
    pub probe_interval_ms: Millis,
    pub rtt_tolerance_ms: f64,
    pub walk_candidates_cap: usize,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        OverlayConfig {
            walk_interval_ms: 500,
            neighborhood_target: 20,
            connection_cap: 30,
            keepalive_prob: 0.05,
            gossip_fanout: 20,
            bootstrap: Vec::new(),
            walking: true,
            liveness: true,
            probe_interval_ms: 1_000,
            rtt_tolerance_ms: 5.0,
            walk_candidates_cap: 64,
        }
    }
}

/// Messages of the discovery overlay.
#[derive(Debug, Clone, PartialEq)]
pub enum DiscoveryMessage {
    IntroRequest { nonce: u64 },
    IntroResponse {
        nonce: u64,
        /// The responder's own reachable address.
        responder: TransportAddress,
        /// The requester's address as the responder sees it.
        observed: TransportAddress,
        introduced: Option<(PublicKey, TransportAddress)>,
    },
    PunctureRequest { requester: PublicKey, address: TransportAddress },
    Puncture,
    Ping { nonce: u64 },
    /// `claimed_rtt_ms` is an optional latency claim by the responder.
    Pong { nonce: u64, claimed_rtt_ms: Option<u32> },
    Gossip(GossipItem),
}

impl DiscoveryMessage {
    pub fn msg_type(&self) -> u8 {
        match self {
            DiscoveryMessage::IntroRequest { .. } => MSG_INTRO_REQUEST,
            DiscoveryMessage::IntroResponse { .. } => MSG_INTRO_RESPONSE,
            DiscoveryMessage::PunctureRequest { .. } => MSG_PUNCTURE_REQUEST,
            DiscoveryMessage::Puncture => MSG_PUNCTURE,
            DiscoveryMessage::Ping { .. } => MSG_PING,
            DiscoveryMessage::Pong { .. } => MSG_PONG,
            DiscoveryMessage::Gossip(_) => MSG_GOSSIP,
        }
    }

    pub fn payload(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            DiscoveryMessage::IntroRequest { nonce } | DiscoveryMessage::Ping { nonce } => {
                w.u64(*nonce);
            }
            DiscoveryMessage::IntroResponse { nonce, responder, observed, introduced } => {
                w.u64(*nonce).addr(responder).addr(observed);
                match introduced {
                    Some((k, a)) => w.u8(1).key(k).addr(a),
                    None => w.u8(0),
                };
            }
            DiscoveryMessage::PunctureRequest { requester, address } => {
                w.key(requester).addr(address);
            }
            DiscoveryMessage::Puncture => {}
            DiscoveryMessage::Pong { nonce, claimed_rtt_ms } => {
                w.u64(*nonce).u32(claimed_rtt_ms.unwrap_or(0));
            }
            DiscoveryMessage::Gossip(item) => return item.to_bytes(),
        }
        w.finish()
    }

    pub fn parse(msg_type: u8, payload: &[u8]) -> Option<Self> {
        let mut r = Reader::new(payload);
        let msg = match msg_type {
            MSG_INTRO_REQUEST => DiscoveryMessage::IntroRequest { nonce: r.u64()? },
            MSG_INTRO_RESPONSE => {
                let nonce = r.u64()?;
                let responder = r.addr()?;
                let observed = r.addr()?;
                let introduced = match r.u8()? {
                    0 => None,
                    1 => Some((r.key()?, r.addr()?)),
                    _ => return None,
                };
                DiscoveryMessage::IntroResponse { nonce, responder, observed, introduced }
            }
            MSG_PUNCTURE_REQUEST => DiscoveryMessage::PunctureRequest { requester: r.key()?, address: r.addr()? },
            MSG_PUNCTURE => DiscoveryMessage::Puncture,
            MSG_PING => DiscoveryMessage::Ping { nonce: r.u64()? },
            MSG_PONG => {
                let nonce = r.u64()?;
                let claim = r.u32()?;
                DiscoveryMessage::Pong { nonce, claimed_rtt_ms: (claim > 0).then_some(claim) }
            }
            MSG_GOSSIP => return GossipItem::from_bytes(payload).map(DiscoveryMessage::Gossip),
            _ => return None,
        };
        r.is_done().then_some(msg)
    }
}

/// Payload tags inside gossip items.
pub const GOSSIP_RENDEZVOUS: u8 = 0x01;
pub const GOSSIP_REVOCATION: u8 = 0x02;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GossipItem {
    pub item_id: Hash32,
    pub payload: Vec<u8>,
    pub origin: PublicKey,
    pub signature: Signature,
}

impl GossipItem {
    fn signed_bytes(item_id: &Hash32, payload: &[u8]) -> Vec<u8> {
        let mut m = item_id.to_vec();
        m.extend_from_slice(payload);
        m
    }

    pub fn new(origin: &KeyPair, payload: Vec<u8>) -> Self {
        let item_id = sha256(&payload);
        let signature = origin.sign(&Self::signed_bytes(&item_id, &payload));
        GossipItem { item_id, payload, origin: origin.public(), signature }
    }

    pub fn verify(&self) -> bool {
        self.item_id == sha256(&self.payload)
            && self.origin.verify(&Self::signed_bytes(&self.item_id, &self.payload), &self.signature)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new().raw(&self.item_id).key(&self.origin).sig(&self.signature).bytes(&self.payload).finish()
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        let mut r = Reader::new(b);
        let item_id = r.array()?;
        let origin = r.key()?;
        let signature = r.sig()?;
        let payload = r.bytes()?.to_vec();
        r.is_done().then_some(GossipItem { item_id, payload, origin, signature })
    }
}

/// A discovery-overlay datagram to send.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlayOut {
    pub to: TransportAddress,
    pub message: DiscoveryMessage,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OverlayEvent {
    Verified(PublicKey),
    Dropped(PublicKey),
    /// A gossip item seen for the first time.
    Gossip(GossipItem),
    /// A liveness ping went out.
    LivenessPing { key: PublicKey, at: Millis },
}

/// Verified neighbours, pending introductions and bootstrap addresses.
#[derive(Debug, Clone, Default)]
pub struct PeerTable {
    pub verified: BTreeMap<PublicKey, Peer>,
    pub walk_candidates: VecDeque<(TransportAddress, Option<PublicKey>)>,
    pub bootstrap: Vec<TransportAddress>,
    pub cap: usize,
}

impl PeerTable {
    pub fn new(cap: usize, bootstrap: Vec<TransportAddress>) -> Self {
        PeerTable { verified: BTreeMap::new(), walk_candidates: VecDeque::new(), bootstrap, cap }
    }

    pub fn len(&self) -> usize {
        self.verified.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verified.is_empty()
    }

    pub fn get(&self, key: &PublicKey) -> Option<&Peer> {
        self.verified.get(key)
    }

    pub fn get_mut(&mut self, key: &PublicKey) -> Option<&mut Peer> {
        self.verified.get_mut(key)
    }

    pub fn contains(&self, key: &PublicKey) -> bool {
        self.verified.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &PublicKey> {
        self.verified.keys()
    }

    /// Adds a peer. At the cap, only a suspected peer is displaced.
    pub fn admit(&mut self, peer: Peer) -> Result<Option<PublicKey>, Peer> {
        if self.verified.contains_key(&peer.key) {
            return Ok(None);
        }
        if self.verified.len() < self.cap {
            self.verified.insert(peer.key, peer);
            return Ok(None);
        }
        let victim = self.verified.iter().find(|(_, p)| p.suspected()).map(|(k, _)| *k);
        match victim {
            Some(v) => {
                self.verified.remove(&v);
                self.verified.insert(peer.key, peer);
                Ok(Some(v))
            }
            None => Err(peer),
        }
    }

    pub fn remove(&mut self, key: &PublicKey) -> Option<Peer> {
        self.verified.remove(key)
    }
}

pub struct Overlay {
    pub config: OverlayConfig,
    pub table: PeerTable,
    pub blacklist: Blacklist,
    my_key: PublicKey,
    my_address: TransportAddress,
    next_walk: Millis,
    next_probe: Millis,
    pending_pings: HashMap<u64, (PublicKey, Millis)>,
    pending_intros: HashMap<u64, Millis>,
    gossip_seen: HashSet<Hash32>,
    out: Vec<OverlayOut>,
    events: Vec<OverlayEvent>,
}

impl Overlay {
    pub fn new(config: OverlayConfig, my_key: PublicKey, my_address: TransportAddress) -> Self {
        let table = PeerTable::new(config.connection_cap, config.bootstrap.clone());
        Overlay {
            config,
            table,
            blacklist: Blacklist::default(),
            my_key,
            my_address,
            next_walk: 0,
            next_probe: 0,
            pending_pings: HashMap::new(),
            pending_intros: HashMap::new(),
            gossip_seen: HashSet::new(),
            out: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn my_address(&self) -> &TransportAddress {
        &self.my_address
    }

    pub fn drain_out(&mut self) -> Vec<OverlayOut> {
        std::mem::take(&mut self.out)
    }

    pub fn drain_events(&mut self) -> Vec<OverlayEvent> {
        std::mem::take(&mut self.events)
    }

    fn send(&mut self, to: TransportAddress, message: DiscoveryMessage) {
        self.out.push(OverlayOut { to, message });
    }

    /// Blacklists `key` and forgets it everywhere.
    pub fn blacklist(&mut self, key: PublicKey) {
        self.blacklist.blacklist(key);
        if self.table.remove(&key).is_some() {
            self.events.push(OverlayEvent::Dropped(key));
        }
        self.table.walk_candidates.retain(|(_, k)| *k != Some(key));
    }

    /// Inserts a peer directly, as if it had been verified at `now`.
    pub fn insert_peer(&mut self, peer: Peer) -> bool {
        if self.blacklist.is_blacklisted(&peer.key) || peer.key == self.my_key {
            return false;
        }
        let key = peer.key;
        self.table.admit(peer).is_ok() && self.table.contains(&key)
    }

    /// Called for every authenticated inbound envelope on any overlay.
    pub fn observe(&mut self, now: Millis, key: &PublicKey, from: &TransportAddress) {
        if *key == self.my_key || self.blacklist.is_blacklisted(key) {
            return;
        }
        if let Some(p) = self.table.get_mut(key) {
            p.touch(now, from);
            return;
        }
        let mut peer = Peer::new(*key, from.clone(), now);
        if let Some(pos) = self.table.walk_candidates.iter().position(|(a, _)| a == from) {
            let (_, introducer) = self.table.walk_candidates.remove(pos).expect("position is valid");
            peer.introduced_by = introducer;
        }
        if let Ok(replaced) = self.table.admit(peer) {
            if let Some(r) = replaced {
                self.events.push(OverlayEvent::Dropped(r));
            }
            self.events.push(OverlayEvent::Verified(*key));
        }
    }

    /// One random-walk step. Suspected peers do not count toward the target.
    pub fn walk_step<R: Rng>(&mut self, now: Millis, rng: &mut R) -> Option<TransportAddress> {
        let trusted = self.table.verified.values().filter(|p| !p.suspected()).count();
        let need = trusted < self.config.neighborhood_target;
        if !need && !rng.gen_bool(self.config.keepalive_prob.clamp(0.0, 1.0)) {
            return None;
        }
        let mut targets: Vec<&TransportAddress> = self.table.verified.values().map(|p| p.address()).collect();
        targets.extend(self.table.bootstrap.iter().filter(|a| **a != self.my_address));
        let target = (*targets.choose(rng)?).clone();
        let nonce = rng.gen();
        self.pending_intros.insert(nonce, now);
        self.send(target.clone(), DiscoveryMessage::IntroRequest { nonce });
        Some(target)
    }

    /// Sends a latency probe to a peer, favouring ones with few samples.
    pub fn probe_step<R: Rng>(&mut self, now: Millis, rng: &mut R) -> Option<PublicKey> {
        let few: Vec<PublicKey> = self
            .table
            .verified
            .values()
            .filter(|p| p.rtt_samples.len() < crate::dpki::ADVERTISED_RTT_SAMPLES)
            .map(|p| p.key)
            .collect();
        let key = match few.choose(rng) {
            Some(k) => *k,
            None => *self.table.keys().collect::<Vec<_>>().choose(rng)?.to_owned(),
        };
        self.ping(now, &key, rng);
        Some(key)
    }

    fn ping<R: Rng>(&mut self, now: Millis, key: &PublicKey, rng: &mut R) {
        let Some(peer) = self.table.get_mut(key) else { return };
        let nonce = rng.gen();
        peer.last_ping_sent = Some(now);
        let to = peer.address().clone();
        self.pending_pings.insert(nonce, (*key, now));
        self.send(to, DiscoveryMessage::Ping { nonce });
    }

    /// Liveness timeline per peer, measured from its last inbound message.
    pub fn evict_stale<R: Rng>(&mut self, now: Millis, rng: &mut R) -> Vec<PublicKey> {
        let mut dropped = Vec::new();
        let mut to_ping = Vec::new();
        for (key, peer) in self.table.verified.iter_mut() {
            let t0 = peer.last_received;
            if now >= t0 + LIVENESS_DROP_MS {
                dropped.push(*key);
                continue;
            }
            let due = t0 + LIVENESS_FIRST_PING_MS + LIVENESS_REPING_MS * peer.liveness_pings as Millis;
            if peer.liveness_pings < LIVENESS_PINGS && now >= due {
                peer.liveness_pings += 1;
                to_ping.push(*key);
            }
        }
        for key in &dropped {
            self.table.remove(key);
            self.events.push(OverlayEvent::Dropped(*key));
        }
        for key in to_ping {
            self.ping(now, &key, rng);
            self.events.push(OverlayEvent::LivenessPing { key, at: now });
        }
        dropped
    }

    /// Runs every periodic duty that is due.
    pub fn tick<R: Rng>(&mut self, now: Millis, rng: &mut R) {
        if self.config.liveness {
            self.evict_stale(now, rng);
        }
        if self.config.walking && now >= self.next_walk {
            self.walk_step(now, rng);
            self.next_walk = now + self.config.walk_interval_ms;
        }
        if self.config.probe_interval_ms > 0 && now >= self.next_probe {
            self.probe_step(now, rng);
            self.next_probe = now + self.config.probe_interval_ms;
        }
        let horizon = now.saturating_sub(30_000);
        self.pending_pings.retain(|_, (_, at)| *at >= horizon);
        self.pending_intros.retain(|_, at| *at >= horizon);
    }

    pub fn next_deadline(&self) -> Option<Millis> {
        let mut next: Option<Millis> = None;
        let mut consider = |t: Millis| next = Some(next.map_or(t, |n: Millis| n.min(t)));
        if self.config.walking {
            consider(self.next_walk);
        }
        if self.config.probe_interval_ms > 0 && !self.table.is_empty() {
            consider(self.next_probe);
        }
        if self.config.liveness {
            for p in self.table.verified.values() {
                let t = if p.liveness_pings < LIVENESS_PINGS {
                    p.last_received + LIVENESS_FIRST_PING_MS + LIVENESS_REPING_MS * p.liveness_pings as Millis
                } else {
                    p.last_received + LIVENESS_DROP_MS
                };
                consider(t);
            }
        }
        next
    }

    /// Handles an authenticated discovery message.
    pub fn handle<R: Rng>(
        &mut self,
        now: Millis,
        sender: &PublicKey,
        from: &TransportAddress,
        message: DiscoveryMessage,
        rng: &mut R,
    ) {
        match message {
            DiscoveryMessage::IntroRequest { nonce } => {
                let candidates: Vec<(PublicKey, TransportAddress)> = self
                    .table
                    .verified
                    .values()
                    .filter(|p| p.key != *sender)
                    .map(|p| (p.key, p.address().clone()))
                    .collect();
                let introduced = candidates.choose(rng).cloned();
                if let Some((_, addr)) = &introduced {
                    self.send(addr.clone(), DiscoveryMessage::PunctureRequest { requester: *sender, address: from.clone() });
                }
                self.send(
                    from.clone(),
                    DiscoveryMessage::IntroResponse {
                        nonce,
                        responder: self.my_address.clone(),
                        observed: from.clone(),
                        introduced,
                    },
                );
            }
            DiscoveryMessage::IntroResponse { nonce, introduced, .. } => {
                if self.pending_intros.remove(&nonce).is_none() {
                    return;
                }
                if let Some((key, addr)) = introduced {
                    if key == self.my_key || self.blacklist.is_blacklisted(&key) || self.table.contains(&key) {
                        return;
                    }
                    if self.table.walk_candidates.len() >= self.config.walk_candidates_cap {
                        self.table.walk_candidates.pop_front();
                    }
                    self.table.walk_candidates.push_back((addr.clone(), Some(*sender)));
                    self.send(addr, DiscoveryMessage::Puncture);
                }
            }
            DiscoveryMessage::PunctureRequest { requester, address } => {
                if requester != self.my_key && !self.blacklist.is_blacklisted(&requester) {
                    self.send(address, DiscoveryMessage::Puncture);
                }
            }
            DiscoveryMessage::Puncture => {}
            DiscoveryMessage::Ping { nonce } => {
                self.send(from.clone(), DiscoveryMessage::Pong { nonce, claimed_rtt_ms: None });
            }
            DiscoveryMessage::Pong { nonce, claimed_rtt_ms } => {
                let Some((key, sent)) = self.pending_pings.remove(&nonce) else { return };
                if key != *sender {
                    return;
                }
                let tolerance = self.config.rtt_tolerance_ms;
                if let Some(p) = self.table.get_mut(&key) {
                    if let Some(c) = claimed_rtt_ms {
                        if p.advertised_min_rtt.is_none() {
                            p.advertise_min_rtt(c as f64);
                        }
                    }
                    p.record_rtt(now, (now - sent) as f64, tolerance);
                }
            }
            DiscoveryMessage::Gossip(item) => self.handle_gossip(item, Some(sender), rng),
        }
    }

    /// Originates an item; returns how many peers it was pushed to.
    pub fn gossip_push<R: Rng>(&mut self, item: GossipItem, rng: &mut R) -> usize {
        if !self.gossip_seen.insert(item.item_id) {
            return 0;
        }
        self.forward(&item, None, rng)
    }

    fn forward<R: Rng>(&mut self, item: &GossipItem, except: Option<&PublicKey>, rng: &mut R) -> usize {
        let peers: Vec<TransportAddress> = self
            .table
            .verified
            .values()
            .filter(|p| Some(&p.key) != except)
            .map(|p| p.address().clone())
            .collect();
        let fanout = self.config.gossip_fanout.min(peers.len());
        let chosen: Vec<TransportAddress> = peers.choose_multiple(rng, fanout).cloned().collect();
        for to in chosen {
            self.send(to, DiscoveryMessage::Gossip(item.clone()));
        }
        fanout
    }

    /// First sight: store, surface, forward. Duplicates and forgeries are ignored.
    pub fn handle_gossip<R: Rng>(&mut self, item: GossipItem, sender: Option<&PublicKey>, rng: &mut R) {
        if self.gossip_seen.contains(&item.item_id) || !item.verify() {
            return;
        }
        self.gossip_seen.insert(item.item_id);
        self.forward(&item, sender, rng);
        self.events.push(OverlayEvent::Gossip(item));
    }

    pub fn has_seen(&self, item_id: &Hash32) -> bool {
        self.gossip_seen.contains(item_id)
    }
}

/// Shorthand used by tests and the simulator.
pub fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    use rand::SeedableRng;
    ChaCha20Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpki::generate_keypair;

    fn key(i: u8) -> PublicKey {
        generate_keypair(Some([i; 32])).public()
    }

    fn overlay(bootstrap: Vec<TransportAddress>) -> Overlay {
        let cfg = OverlayConfig { bootstrap, ..Default::default() };
        Overlay::new(cfg, key(0), TransportAddress::Sim(0))
    }

    #[test]
    fn message_codecs() {
        let msgs = vec![
            DiscoveryMessage::IntroRequest { nonce: 7 },
            DiscoveryMessage::IntroResponse {
                nonce: 7,
                responder: TransportAddress::Sim(1),
                observed: TransportAddress::Sim(2),
                introduced: Some((key(3), TransportAddress::Sim(3))),
            },
            DiscoveryMessage::PunctureRequest { requester: key(1), address: TransportAddress::Sim(1) },
            DiscoveryMessage::Puncture,
            DiscoveryMessage::Ping { nonce: 1 },
            DiscoveryMessage::Pong { nonce: 1, claimed_rtt_ms: Some(50) },
            DiscoveryMessage::Gossip(GossipItem::new(&generate_keypair(Some([1; 32])), b"x".to_vec())),
        ];
        for m in msgs {
            assert_eq!(DiscoveryMessage::parse(m.msg_type(), &m.payload()), Some(m));
        }
    }

    #[test]
    fn empty_table_walks_to_bootstrap() {
        let mut o = overlay(vec![TransportAddress::Sim(9)]);
        let mut rng = rng_from_seed(1);
        assert_eq!(o.walk_step(0, &mut rng), Some(TransportAddress::Sim(9)));
    }

    #[test]
    fn no_targets_is_noop() {
        let mut o = overlay(vec![]);
        assert_eq!(o.walk_step(0, &mut rng_from_seed(1)), None);
    }

    #[test]
    fn keepalive_rate_when_full() {
        let mut o = overlay(vec![]);
        for i in 1..=20u8 {
            o.insert_peer(Peer::new(key(i), TransportAddress::Sim(i as u64), 0));
        }
        let mut rng = rng_from_seed(5);
        let n = 1000;
        let sent = (0..n).filter(|_| o.walk_step(0, &mut rng).is_some()).count() as f64;
        let (mean, sd) = (n as f64 * 0.05, (n as f64 * 0.05 * 0.95).sqrt());
        assert!((sent - mean).abs() <= 3.0 * sd, "sent {sent}");
    }

    #[test]
    fn introduction_from_single_entry_table() {
        let mut o = overlay(vec![]);
        let (a, b) = (key(1), key(2));
        o.insert_peer(Peer::new(b, TransportAddress::Sim(2), 0));
        let mut rng = rng_from_seed(1);
        o.handle(0, &a, &TransportAddress::Sim(1), DiscoveryMessage::IntroRequest { nonce: 3 }, &mut rng);
        let out = o.drain_out();
        assert!(out.contains(&OverlayOut {
            to: TransportAddress::Sim(2),
            message: DiscoveryMessage::PunctureRequest { requester: a, address: TransportAddress::Sim(1) }
        }));
        let resp = out.iter().find(|o| o.to == TransportAddress::Sim(1)).unwrap();
        match &resp.message {
            DiscoveryMessage::IntroResponse { introduced, responder, .. } => {
                assert_eq!(introduced, &Some((b, TransportAddress::Sim(2))));
                assert_eq!(responder, &TransportAddress::Sim(0));
            }
            m => panic!("{m:?}"),
        }
    }

    #[test]
    fn empty_table_introduces_nobody() {
        let mut o = overlay(vec![]);
        o.handle(0, &key(1), &TransportAddress::Sim(1), DiscoveryMessage::IntroRequest { nonce: 3 }, &mut rng_from_seed(1));
        let out = o.drain_out();
        assert_eq!(out.len(), 1);
        assert!(matches!(out[0].message, DiscoveryMessage::IntroResponse { introduced: None, .. }));
    }

    #[test]
    fn cap_holds_and_suspected_peers_are_replaced() {
        let mut o = overlay(vec![]);
        for i in 1..=40u8 {
            o.observe(0, &key(i), &TransportAddress::Sim(i as u64));
        }
        assert_eq!(o.table.len(), 30);
        let victim = *o.table.keys().nth(3).unwrap();
        o.table.get_mut(&victim).unwrap().relay_failures = 1;
        o.observe(1, &key(41), &TransportAddress::Sim(41));
        assert!(o.table.contains(&key(41)));
        assert!(!o.table.contains(&victim));
        assert_eq!(o.table.len(), 30);
    }

    #[test]
    fn blacklisted_never_admitted() {
        let mut o = overlay(vec![]);
        o.blacklist(key(1));
        o.observe(0, &key(1), &TransportAddress::Sim(1));
        assert!(o.table.is_empty());
        assert!(!o.insert_peer(Peer::new(key(1), TransportAddress::Sim(1), 0)));
    }

    fn silent_peer_overlay() -> Overlay {
        let mut o = overlay(vec![]);
        o.config.walking = false;
        o.config.probe_interval_ms = 0;
        o.insert_peer(Peer::new(key(1), TransportAddress::Sim(1), 1_000));
        o
    }

    #[test]
    fn liveness_timeline_exact() {
        let mut o = silent_peer_overlay();
        let mut rng = rng_from_seed(1);
        let mut pings = Vec::new();
        let mut dropped_at = None;
        while let Some(t) = o.next_deadline() {
            o.tick(t, &mut rng);
            for e in o.drain_events() {
                match e {
                    OverlayEvent::LivenessPing { at, .. } => pings.push(at),
                    OverlayEvent::Dropped(_) => dropped_at = Some(t),
                    _ => {}
                }
            }
            if dropped_at.is_some() {
                break;
            }
        }
        assert_eq!(pings, vec![31_000, 41_000, 51_000]);
        assert_eq!(dropped_at, Some(61_000));
        assert_eq!(o.next_deadline(), None);
    }

    #[test]
    fn answer_resets_timeline() {
        let mut o = silent_peer_overlay();
        let mut rng = rng_from_seed(1);
        o.tick(31_000, &mut rng);
        o.observe(32_000, &key(1), &TransportAddress::Sim(1));
        o.tick(61_000, &mut rng);
        assert!(o.table.contains(&key(1)));
        assert_eq!(o.next_deadline(), Some(62_000));
    }

    #[test]
    fn late_answer_just_before_drop_retains() {
        let mut o = silent_peer_overlay();
        let mut rng = rng_from_seed(1);
        for t in [31_000, 41_000, 51_000] {
            o.tick(t, &mut rng);
        }
        o.observe(60_999, &key(1), &TransportAddress::Sim(1));
        o.tick(61_000, &mut rng);
        assert!(o.table.contains(&key(1)));
    }

    #[test]
    fn gossip_dedup_and_forgery() {
        let mut o = overlay(vec![]);
        for i in 1..=5u8 {
            o.insert_peer(Peer::new(key(i), TransportAddress::Sim(i as u64), 0));
        }
        let mut rng = rng_from_seed(2);
        let item = GossipItem::new(&generate_keypair(Some([9; 32])), b"hello".to_vec());
        o.handle_gossip(item.clone(), Some(&key(1)), &mut rng);
        o.handle_gossip(item.clone(), Some(&key(2)), &mut rng);
        let events = o.drain_events();
        assert_eq!(events.len(), 1);
        assert_eq!(o.drain_out().len(), 4);

        let mut forged = GossipItem::new(&generate_keypair(Some([9; 32])), b"other".to_vec());
        forged.payload = b"evil".to_vec();
        o.handle_gossip(forged, None, &mut rng);
        assert!(o.drain_events().is_empty());
    }

    #[test]
    fn pong_records_rtt_and_detects_fraud() {
        let mut o = overlay(vec![]);
        o.insert_peer(Peer::new(key(1), TransportAddress::Sim(1), 0));
        let mut rng = rng_from_seed(3);
        o.ping(0, &key(1), &mut rng);
        let nonce = match o.drain_out()[0].message {
            DiscoveryMessage::Ping { nonce } => nonce,
            _ => unreachable!(),
        };
        o.handle(50, &key(1), &TransportAddress::Sim(1), DiscoveryMessage::Pong { nonce, claimed_rtt_ms: Some(50) }, &mut rng);
        assert_eq!(o.table.get(&key(1)).unwrap().rtt_samples.len(), 1);
        o.ping(100, &key(1), &mut rng);
        let nonce = match o.drain_out()[0].message {
            DiscoveryMessage::Ping { nonce } => nonce,
            _ => unreachable!(),
        };
        o.handle(101, &key(1), &TransportAddress::Sim(1), DiscoveryMessage::Pong { nonce, claimed_rtt_ms: Some(50) }, &mut rng);
        assert!(o.table.get(&key(1)).unwrap().latency_fraud);
    }
}
