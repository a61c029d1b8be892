//! Full nodes and adversary actors on one deterministic fabric.

use ipv8_core::dpki::{generate_keypair, Peer, PublicKey};
use ipv8_core::node::{Node, NodeConfig, NodeEvent};
use ipv8_core::wire::{DropReason, FabricEvent, LatencyModel, Ledger, SimFabric, TransportAddress};
use ipv8_core::{sha256, Millis};

use crate::sybil::SybilActor;

pub enum Actor {
    Node(Box<Node>),
    Sybil(Box<SybilActor>),
    Offline,
}

/// One datagram as it left its sender.
#[derive(Debug, Clone)]
pub struct Captured {
    pub at: Millis,
    pub from: u64,
    pub to: u64,
    pub bytes: Vec<u8>,
}

pub struct SimNetwork {
    pub fabric: SimFabric,
    actors: Vec<Actor>,
    wake_at: Vec<Option<Millis>>,
    seed: u64,
    /// Every datagram sent by a node, when enabled.
    pub capture: Option<Vec<Captured>>,
    /// Node events in delivery order, when enabled.
    pub events: Vec<(Millis, usize, NodeEvent)>,
    pub record_events: bool,
}

/// Deterministic key seed for actor `index` of a run.
pub fn actor_seed(seed: u64, index: usize) -> [u8; 32] {
    let mut b = [0u8; 16];
    b[..8].copy_from_slice(&seed.to_be_bytes());
    b[8..].copy_from_slice(&(index as u64).to_be_bytes());
    sha256(&b)
}

impl SimNetwork {
    pub fn new(latency: Box<dyn LatencyModel>, seed: u64) -> Self {
        SimNetwork {
            fabric: SimFabric::new(latency, 0),
            actors: Vec::new(),
            wake_at: Vec::new(),
            seed,
            capture: None,
            events: Vec::new(),
            record_events: true,
        }
    }

    pub fn now(&self) -> Millis {
        self.fabric.now()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.actors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actors.is_empty()
    }

    pub fn ledger(&self) -> &Ledger {
        self.fabric.ledger()
    }

    /// Sent = delivered + dropped + in flight.
    pub fn ledger_balanced(&self) -> bool {
        let l = self.fabric.ledger();
        l.sent == l.delivered + l.dropped_total() + self.fabric.in_flight()
    }

    pub fn add_node(&mut self, config: NodeConfig) -> usize {
        let index = self.actors.len();
        let keypair = generate_keypair(Some(actor_seed(self.seed, index)));
        let rng_seed = self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64);
        let node = Node::new(config, keypair, TransportAddress::Sim(index as u64), rng_seed);
        self.actors.push(Actor::Node(Box::new(node)));
        self.wake_at.push(None);
        self.schedule(index);
        index
    }

    pub fn add_sybil(&mut self, actor: SybilActor) -> usize {
        self.actors.push(Actor::Sybil(Box::new(actor)));
        self.wake_at.push(None);
        self.actors.len() - 1
    }

    /// Key a Sybil at `index` will use; lets callers wire Sybils up before adding them.
    pub fn key_for(&self, index: usize) -> PublicKey {
        generate_keypair(Some(actor_seed(self.seed, index))).public()
    }

    pub fn actor(&self, i: usize) -> &Actor {
        &self.actors[i]
    }

    pub fn is_node(&self, i: usize) -> bool {
        matches!(self.actors[i], Actor::Node(_))
    }

    pub fn node(&self, i: usize) -> &Node {
        match &self.actors[i] {
            Actor::Node(n) => n,
            _ => panic!("actor {i} is not a node"),
        }
    }

    fn node_mut(&mut self, i: usize) -> &mut Node {
        match &mut self.actors[i] {
            Actor::Node(n) => n,
            _ => panic!("actor {i} is not a node"),
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, &Node)> {
        self.actors.iter().enumerate().filter_map(|(i, a)| match a {
            Actor::Node(n) => Some((i, n.as_ref())),
            _ => None,
        })
    }

    /// Runs `f` against node `i` at the current time and sends whatever it produced.
    pub fn with_node<T>(&mut self, i: usize, f: impl FnOnce(&mut Node, Millis) -> T) -> T {
        let now = self.now();
        let r = f(self.node_mut(i), now);
        self.flush(i);
        r
    }

    /// The node stops receiving and sending. Its datagrams in flight are lost.
    pub fn take_offline(&mut self, i: usize) {
        self.actors[i] = Actor::Offline;
        self.wake_at[i] = None;
    }

    /// Puts `a` and `b` in each other's verified tables, as if introduced at
    /// `now`. Does nothing unless both have room.
    pub fn link(&mut self, a: usize, b: usize) -> bool {
        let now = self.now();
        let (ka, kb) = (self.node(a).public(), self.node(b).public());
        let room = |n: &Node, other: &PublicKey| {
            !n.overlay.table.contains(other) && n.overlay.table.len() < n.overlay.table.cap
        };
        if a == b || !room(self.node(a), &kb) || !room(self.node(b), &ka) {
            return false;
        }
        let (aa, ab) = (TransportAddress::Sim(a as u64), TransportAddress::Sim(b as u64));
        let ok_a = self.node_mut(a).overlay.insert_peer(Peer::new(kb, ab, now));
        let ok_b = self.node_mut(b).overlay.insert_peer(Peer::new(ka, aa, now));
        self.schedule(a);
        self.schedule(b);
        ok_a && ok_b
    }

    /// One-sided: node `a` learns `key` at actor `b`.
    pub fn know(&mut self, a: usize, key: PublicKey, b: usize) -> bool {
        let now = self.now();
        let ok = self.node_mut(a).overlay.insert_peer(Peer::new(key, TransportAddress::Sim(b as u64), now));
        self.schedule(a);
        ok
    }

    /// Schedules a wake for node `i` at its next deadline, if sooner than the pending one.
    pub fn schedule(&mut self, i: usize) {
        let now = self.now();
        let Actor::Node(n) = &self.actors[i] else { return };
        let Some(d) = n.next_deadline() else { return };
        let d = d.max(now);
        if self.wake_at[i].is_none_or(|w| d < w || w < now) {
            self.wake_at[i] = Some(d);
            self.fabric.schedule_wake(i as u64, d);
        }
    }

    fn flush(&mut self, i: usize) {
        let now = self.now();
        let out = match &mut self.actors[i] {
            Actor::Node(n) => n.drain_outbox(),
            _ => return,
        };
        if self.record_events {
            let evs = match &mut self.actors[i] {
                Actor::Node(n) => n.drain_events(),
                _ => Vec::new(),
            };
            self.events.extend(evs.into_iter().map(|e| (now, i, e)));
        }
        for (to, bytes) in out {
            let Some(t) = to.sim_index() else { continue };
            if let Some(c) = &mut self.capture {
                c.push(Captured { at: now, from: i as u64, to: t, bytes: bytes.clone() });
            }
            self.fabric.send(i as u64, t, bytes);
        }
        self.schedule(i);
    }

    fn undeliver(&mut self, reason: DropReason) {
        let l = self.fabric.ledger_mut();
        l.delivered -= 1;
        l.record_drop(reason);
    }

    /// Processes one event. Returns false when the queue is empty.
    pub fn step(&mut self) -> bool {
        let Some((now, ev)) = self.fabric.pop() else { return false };
        match ev {
            FabricEvent::Datagram { from, to, bytes } => {
                let i = to as usize;
                match self.actors.get_mut(i) {
                    Some(Actor::Node(n)) => {
                        let before = n.stats.blacklisted;
                        n.handle_datagram(now, &TransportAddress::Sim(from), &bytes);
                        if n.stats.blacklisted > before {
                            self.undeliver(DropReason::Blacklist);
                        }
                        self.flush(i);
                    }
                    Some(Actor::Sybil(s)) => {
                        if !s.handle(now, from, &bytes, &mut self.fabric) {
                            self.undeliver(DropReason::Adversary);
                        }
                    }
                    _ => self.undeliver(DropReason::NoHost),
                }
            }
            FabricEvent::Wake { node } => {
                let i = node as usize;
                if self.wake_at[i] == Some(now) {
                    self.wake_at[i] = None;
                    if let Actor::Node(n) = &mut self.actors[i] {
                        n.tick(now);
                        self.flush(i);
                        // Guard against a deadline that stays in the past.
                        if self.wake_at[i] == Some(now) {
                            self.wake_at[i] = Some(now + 1);
                            self.fabric.schedule_wake(node, now + 1);
                        }
                    }
                }
            }
        }
        true
    }

    /// Runs every event up to and including `t`, then sets the clock to `t`.
    pub fn run_until(&mut self, t: Millis) {
        while self.fabric.peek_time().is_some_and(|x| x <= t) {
            self.step();
        }
        self.fabric.advance_to(t);
    }

    /// Steps until `done` holds or the clock passes `limit`. Returns the time it held.
    pub fn run_until_with(&mut self, limit: Millis, mut done: impl FnMut(&mut SimNetwork) -> bool) -> Option<Millis> {
        if done(self) {
            return Some(self.now());
        }
        while self.fabric.peek_time().is_some_and(|x| x <= limit) {
            self.step();
            if done(self) {
                return Some(self.now());
            }
        }
        self.fabric.advance_to(limit);
        None
    }

    pub fn drain_events(&mut self) -> Vec<(Millis, usize, NodeEvent)> {
        std::mem::take(&mut self.events)
    }
}
