//! Onion-routed circuits built by telescoping, relaying, a pool of ready
//! circuits, and hidden services joined at a rendezvous relay.

mod cell;

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{CryptoRng, Rng, RngCore};
use x25519_dalek::{PublicKey as XPublic, StaticSecret};

pub use cell::{
    join_layered, split_layered, Cell, Direction, EndToEnd, LayerKeys, CELL_CREATE, CELL_CREATED, CELL_DATA,
    CELL_DESTROY, CELL_EXTEND, CELL_EXTENDED, CELL_INTRO_ESTABLISH, CELL_RENDEZVOUS, LAYER_HEADER, LAYER_TAG,
    MAX_CELL_BODY,
};

use crate::codec::{Reader, Writer};
use crate::dpki::{KeyPair, PublicKey};
use crate::overlay::PeerTable;
use crate::wire::TransportAddress;
use crate::Millis;

/// Minimum RTT samples before a peer may be used as a relay.
pub const MIN_RTT_SAMPLES: usize = 3;
pub const COOKIE_LEN: usize = 20;

// Sub-commands carried as the first plaintext byte of layered cells.
const SUB_EXIT_DATA: u8 = 0x00;
const SUB_BRIDGED: u8 = 0x01;
const SUB_ESTABLISH: u8 = 0x01;
const SUB_ESTABLISHED: u8 = 0x02;
const SUB_INTRODUCE1: u8 = 0x03;
const SUB_INTRODUCE2: u8 = 0x04;
const SUB_INTRODUCE_ACK: u8 = 0x05;
const SUB_RENDEZVOUS1: u8 = 0x03;
const SUB_RENDEZVOUS2: u8 = 0x04;

#[derive(Debug, Clone)]
pub struct AnonConfig {
    pub hop_count: usize,
    pub pool_min: usize,
    pub pool_max: usize,
    pub build_timeout_ms: Millis,
    pub rendezvous_timeout_ms: Millis,
    pub maintain_interval_ms: Millis,
    /// Keep a pool of ready circuits.
    pub pool_enabled: bool,
    /// Introduction points a hidden service asks for.
    pub intro_points: usize,
    /// Misbehaving relay: corrupt one byte of every forwarded cell. Tests only.
    pub tamper_relayed: bool,
    /// Never chosen as relays, e.g. bootstrap servers.
    pub excluded_relays: Vec<PublicKey>,
}

impl Default for AnonConfig {
    fn default() -> Self {
        AnonConfig {
            hop_count: 2,
            pool_min: 4,
            pool_max: 8,
            build_timeout_ms: 10_000,
            rendezvous_timeout_ms: 30_000,
            maintain_interval_ms: 1_000,
            pool_enabled: true,
            intro_points: 3,
            tamper_relayed: false,
            excluded_relays: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnonError {
    #[error("insufficient-candidates: need {needed}, have {available}")]
    InsufficientCandidates { needed: usize, available: usize },
    #[error("hop count must be 1..=3")]
    InvalidHopCount,
    #[error("no ready circuit")]
    NoReadyCircuit,
    #[error("no-introduction-point-reachable")]
    NoIntroductionPoint,
    #[error("rendezvous-timeout")]
    RendezvousTimeout,
    #[error("build timeout")]
    BuildTimeout,
    #[error("unknown circuit")]
    UnknownCircuit,
    #[error("unknown channel")]
    UnknownChannel,
    #[error("channel not open")]
    ChannelNotOpen,
    #[error("payload too large for one cell")]
    PayloadTooLarge,
    #[error("circuit destroyed")]
    Destroyed,
}

/// Hidden-service descriptor spread by gossip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RendezvousInfo {
    pub service_key: PublicKey,
    pub introduction_points: Vec<(PublicKey, TransportAddress)>,
    pub cookie: [u8; COOKIE_LEN],
}

impl RendezvousInfo {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.key(&self.service_key).raw(&self.cookie).u8(self.introduction_points.len() as u8);
        for (k, a) in &self.introduction_points {
            w.key(k).addr(a);
        }
        w.finish()
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        let mut r = Reader::new(b);
        let service_key = r.key()?;
        let cookie = r.array()?;
        let n = r.u8()?;
        let introduction_points = (0..n).map(|_| Some((r.key()?, r.addr()?))).collect::<Option<Vec<_>>>()?;
        r.is_done().then_some(RendezvousInfo { service_key, introduction_points, cookie })
    }
}

#[derive(Debug, Clone)]
pub struct Hop {
    pub key: PublicKey,
    pub address: TransportAddress,
    /// Circuit id on the link into this hop.
    pub link_cid: u32,
    pub keys: LayerKeys,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CircuitState {
    Extending,
    Ready,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Pool,
    /// A caller-requested circuit.
    Manual,
    ClientRendezvous(u64),
    ClientIntro(u64),
    ServiceIntro,
    ServiceRendezvous(u64),
}

struct PendingHop {
    secret: StaticSecret,
    client_eph: [u8; 32],
    link_cid: u32,
}

pub struct Circuit {
    pub circuit_id: u32,
    pub hops: Vec<Hop>,
    pub state: CircuitState,
    pub created_at: Millis,
    pub ready_at: Option<Millis>,
    pub purpose: Purpose,
    path: Vec<(PublicKey, TransportAddress)>,
    pending: Option<PendingHop>,
    deadline: Millis,
    counter: u64,
}

impl Circuit {
    pub fn path(&self) -> &[(PublicKey, TransportAddress)] {
        &self.path
    }

    pub fn exit(&self) -> Option<&PublicKey> {
        self.path.last().map(|(k, _)| k)
    }

    fn first_hop_key(&self) -> &PublicKey {
        &self.path[0].0
    }
}

/// A relay's link pair: previous hop and, once extended, the next hop.
pub type LinkId = (PublicKey, u32);

#[derive(Debug, Clone)]
pub struct NextHop {
    pub key: PublicKey,
    pub address: TransportAddress,
    pub cid: u32,
    pub ready: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndRole {
    None,
    IntroPoint,
    RendezvousPoint,
}

pub struct RelayLink {
    pub prev_address: TransportAddress,
    pub index: u8,
    pub next: Option<NextHop>,
    pub role: EndRole,
    pub bridge: Option<LinkId>,
    keys: LayerKeys,
    back_counter: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelState {
    Pending,
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelRole {
    Client,
    Service,
}

pub struct ChannelInfo {
    pub role: ChannelRole,
    pub state: ChannelState,
    pub rendezvous_circuit: Option<u32>,
    pub intro_circuit: Option<u32>,
    /// Rendezvous relay of the channel.
    pub rendezvous_point: (PublicKey, TransportAddress),
    pub service_key: PublicKey,
    pub opened_at: Option<Millis>,
    rv_cookie: [u8; COOKIE_LEN],
    intro_cookie: [u8; COOKIE_LEN],
    secret: Option<StaticSecret>,
    client_eph: [u8; 32],
    rv_established: bool,
    e2e: Option<EndToEnd>,
    deadline: Millis,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnonEvent {
    CircuitReady { circuit_id: u32, hops: usize, latency_ms: Millis, purpose: Purpose },
    CircuitClosed { circuit_id: u32, purpose: Purpose, error: AnonError },
    /// Backward data from the exit of one of our circuits.
    CircuitData { circuit_id: u32, data: Vec<u8> },
    /// Forward data arriving at us as the exit of someone's circuit.
    ExitData { link: LinkId, data: Vec<u8> },
    /// A relay link was torn down after failed decryption.
    TamperDetected { link: LinkId },
    ChannelOpen { channel: u64, role: ChannelRole },
    ChannelData { channel: u64, data: Vec<u8> },
    ChannelFailed { channel: u64, error: AnonError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnonOut {
    pub to: TransportAddress,
    pub cell: Cell,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnonStats {
    pub layers_added: u64,
    pub layers_removed: u64,
    pub cells_relayed: u64,
}

/// Picks `n` distinct relays from distinct latency bands. Peers with fewer
/// than three RTT samples, suspected peers and `exclude` are never chosen.
pub fn select_relays<R: Rng>(
    n: usize,
    table: &PeerTable,
    exclude: &[PublicKey],
    rng: &mut R,
) -> Result<Vec<(PublicKey, TransportAddress)>, AnonError> {
    let mut candidates: Vec<(f64, PublicKey, TransportAddress)> = table
        .verified
        .values()
        .filter(|p| !p.suspected() && p.rtt_samples.len() >= MIN_RTT_SAMPLES && !exclude.contains(&p.key))
        .filter_map(|p| Some((p.median_rtt()?, p.key, p.address().clone())))
        .collect();
    if candidates.len() < n {
        return Err(AnonError::InsufficientCandidates { needed: n, available: candidates.len() });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let len = candidates.len();
    let mut picks: Vec<(PublicKey, TransportAddress)> = (0..n)
        .map(|b| {
            let band = &candidates[b * len / n..(b + 1) * len / n];
            let (_, k, a) = band.choose(rng).expect("bands are non-empty when len >= n");
            (*k, a.clone())
        })
        .collect();
    picks.shuffle(rng);
    Ok(picks)
}

fn created_message(client_eph: &[u8; 32], relay_eph: &[u8; 32], cid: u32, index: u8) -> Vec<u8> {
    Writer::new().raw(b"ipv8-created").raw(client_eph).raw(relay_eph).u32(cid).u8(index).finish()
}

fn rendezvous_message(client_eph: &[u8; 32], service_eph: &[u8; 32], cookie: &[u8; COOKIE_LEN]) -> Vec<u8> {
    Writer::new().raw(b"ipv8-rendezvous").raw(client_eph).raw(service_eph).raw(cookie).finish()
}

pub struct Anon {
    pub config: AnonConfig,
    identity: KeyPair,
    circuits: BTreeMap<u32, Circuit>,
    links: BTreeMap<LinkId, RelayLink>,
    reverse: HashMap<LinkId, LinkId>,
    intro_cookies: HashMap<[u8; COOKIE_LEN], LinkId>,
    rv_cookies: HashMap<[u8; COOKIE_LEN], LinkId>,
    channels: BTreeMap<u64, ChannelInfo>,
    service: Option<RendezvousInfo>,
    next_maintain: Millis,
    out: Vec<AnonOut>,
    events: Vec<AnonEvent>,
    pub stats: AnonStats,
}

impl Anon {
    pub fn new(config: AnonConfig, identity: KeyPair) -> Self {
        Anon {
            config,
            identity,
            circuits: BTreeMap::new(),
            links: BTreeMap::new(),
            reverse: HashMap::new(),
            intro_cookies: HashMap::new(),
            rv_cookies: HashMap::new(),
            channels: BTreeMap::new(),
            service: None,
            next_maintain: 0,
            out: Vec::new(),
            events: Vec::new(),
            stats: AnonStats::default(),
        }
    }

    pub fn drain_out(&mut self) -> Vec<AnonOut> {
        std::mem::take(&mut self.out)
    }

    pub fn drain_events(&mut self) -> Vec<AnonEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn circuit(&self, cid: u32) -> Option<&Circuit> {
        self.circuits.get(&cid)
    }

    pub fn circuits(&self) -> impl Iterator<Item = &Circuit> {
        self.circuits.values()
    }

    pub fn relay_links(&self) -> impl Iterator<Item = (&LinkId, &RelayLink)> {
        self.links.iter()
    }

    pub fn channel(&self, id: u64) -> Option<&ChannelInfo> {
        self.channels.get(&id)
    }

    pub fn channels(&self) -> impl Iterator<Item = (&u64, &ChannelInfo)> {
        self.channels.iter()
    }

    pub fn service_info(&self) -> Option<&RendezvousInfo> {
        self.service.as_ref()
    }

    pub fn ready_pool(&self) -> usize {
        self.circuits.values().filter(|c| c.purpose == Purpose::Pool && c.state == CircuitState::Ready).count()
    }

    fn emit(&mut self, to: TransportAddress, cell: Cell) {
        self.out.push(AnonOut { to, cell });
    }

    fn fresh_cid<R: Rng>(&self, rng: &mut R) -> u32 {
        loop {
            let c: u32 = rng.gen();
            if c != 0 && !self.circuits.contains_key(&c) {
                return c;
            }
        }
    }

    /// Starts a telescoped circuit through `relays` in order.
    pub fn build_circuit<R: RngCore + CryptoRng>(
        &mut self,
        now: Millis,
        relays: Vec<(PublicKey, TransportAddress)>,
        purpose: Purpose,
        rng: &mut R,
    ) -> Result<u32, AnonError> {
        if relays.is_empty() || relays.len() > 3 {
            return Err(AnonError::InvalidHopCount);
        }
        let cid = self.fresh_cid(rng);
        let circuit = Circuit {
            circuit_id: cid,
            hops: Vec::new(),
            state: CircuitState::Extending,
            created_at: now,
            ready_at: None,
            purpose,
            path: relays,
            pending: None,
            deadline: now + self.config.build_timeout_ms,
            counter: 0,
        };
        self.circuits.insert(cid, circuit);
        self.extend_next(now, cid, rng);
        Ok(cid)
    }

    fn extend_next<R: RngCore + CryptoRng>(&mut self, now: Millis, cid: u32, rng: &mut R) {
        let link_cid = if self.circuits[&cid].hops.is_empty() { cid } else { self.fresh_cid(rng) };
        let secret = StaticSecret::random_from_rng(&mut *rng);
        let client_eph = XPublic::from(&secret).to_bytes();
        let timeout = self.config.build_timeout_ms;
        let c = self.circuits.get_mut(&cid).expect("caller checked");
        let idx = c.hops.len();
        let index = (idx + 1) as u8;
        let (key, addr) = c.path[idx].clone();
        c.pending = Some(PendingHop { secret, client_eph, link_cid });
        c.deadline = now + timeout;
        if idx == 0 {
            let body = Writer::new().u8(index).raw(&client_eph).finish();
            self.emit(addr, Cell::new(link_cid, CELL_CREATE, body));
        } else {
            let plain = Writer::new().key(&key).addr(&addr).u32(link_cid).u8(index).raw(&client_eph).finish();
            self.send_forward(cid, CELL_EXTEND, &plain);
        }
    }

    /// Layers `plain` for every established hop and sends it to the first one.
    fn send_forward(&mut self, cid: u32, cell_type: u8, plain: &[u8]) {
        let Some(c) = self.circuits.get_mut(&cid) else { return };
        let counter = c.counter;
        c.counter += 1;
        let mut ct = plain.to_vec();
        for hop in c.hops.iter().rev() {
            ct = hop.keys.seal(hop.link_cid, Direction::Forward, 0, counter, &ct);
        }
        let n = c.hops.len() as u64;
        let to = c.hops[0].address.clone();
        self.stats.layers_added += n;
        self.emit(to, Cell::new(cid, cell_type, join_layered(0, counter, &ct)));
    }

    /// Sends data to the exit of a ready circuit.
    pub fn send_data(&mut self, cid: u32, data: &[u8]) -> Result<(), AnonError> {
        let c = self.circuits.get(&cid).ok_or(AnonError::UnknownCircuit)?;
        if c.state != CircuitState::Ready {
            return Err(AnonError::UnknownCircuit);
        }
        if data.len() + 1 + LAYER_HEADER + LAYER_TAG * c.hops.len() > MAX_CELL_BODY {
            return Err(AnonError::PayloadTooLarge);
        }
        let mut plain = vec![SUB_EXIT_DATA];
        plain.extend_from_slice(data);
        self.send_forward(cid, CELL_DATA, &plain);
        Ok(())
    }

    /// Answers data that arrived at us as an exit.
    pub fn exit_reply(&mut self, link: &LinkId, data: &[u8]) {
        let mut plain = vec![SUB_EXIT_DATA];
        plain.extend_from_slice(data);
        self.relay_send_back(link, CELL_DATA, &plain);
    }

    /// Tears down one of our circuits.
    pub fn close_circuit(&mut self, cid: u32) {
        let Some(c) = self.circuits.get_mut(&cid) else { return };
        if c.state == CircuitState::Closed {
            return;
        }
        c.state = CircuitState::Closed;
        let purpose = c.purpose;
        let first = c.path[0].1.clone();
        self.circuits.remove(&cid);
        self.emit(first, Cell::new(cid, CELL_DESTROY, vec![0]));
        self.events.push(AnonEvent::CircuitClosed { circuit_id: cid, purpose, error: AnonError::Destroyed });
        self.on_circuit_lost(cid, purpose, AnonError::Destroyed);
    }

    fn fail_circuit(&mut self, cid: u32, error: AnonError) {
        let Some(c) = self.circuits.remove(&cid) else { return };
        if !c.hops.is_empty() {
            self.emit(c.hops[0].address.clone(), Cell::new(cid, CELL_DESTROY, vec![1]));
        }
        self.events.push(AnonEvent::CircuitClosed { circuit_id: cid, purpose: c.purpose, error: error.clone() });
        self.on_circuit_lost(cid, c.purpose, error);
    }

    fn on_circuit_lost(&mut self, _cid: u32, purpose: Purpose, error: AnonError) {
        match purpose {
            Purpose::ClientRendezvous(ch) | Purpose::ServiceRendezvous(ch) => self.fail_channel(ch, error),
            Purpose::ClientIntro(ch) => {
                let failed = self.channels.get(&ch).is_some_and(|c| c.state == ChannelState::Pending && !c.rv_established);
                let pending = self.channels.get(&ch).is_some_and(|c| c.state == ChannelState::Pending);
                if (failed || matches!(error, AnonError::BuildTimeout)) && pending {
                    self.fail_channel(ch, AnonError::NoIntroductionPoint);
                }
            }
            _ => {}
        }
    }

    fn fail_channel(&mut self, ch: u64, error: AnonError) {
        let Some(info) = self.channels.get_mut(&ch) else { return };
        if info.state == ChannelState::Closed {
            return;
        }
        info.state = ChannelState::Closed;
        let circuits = [info.rendezvous_circuit, info.intro_circuit];
        self.events.push(AnonEvent::ChannelFailed { channel: ch, error });
        for c in circuits.into_iter().flatten() {
            if self.circuits.contains_key(&c) {
                self.close_circuit(c);
            }
        }
    }

    /// Handles a cell received in an authenticated envelope.
    pub fn handle_cell<R: RngCore + CryptoRng>(
        &mut self,
        now: Millis,
        sender: &PublicKey,
        from: &TransportAddress,
        cell: Cell,
        table: &mut PeerTable,
        rng: &mut R,
    ) {
        let cid = cell.circuit_id;
        if self.circuits.get(&cid).is_some_and(|c| c.first_hop_key() == sender) {
            self.client_cell(now, cell, table, rng);
            return;
        }
        let id = (*sender, cid);
        if let Some(link_id) = self.reverse.get(&id).copied() {
            self.relay_backward(link_id, cell);
            return;
        }
        if self.links.contains_key(&id) {
            self.relay_forward(now, id, cell, rng);
            return;
        }
        if cell.cell_type == CELL_CREATE {
            self.accept_create(id, from, &cell.body, rng);
        }
    }

    fn accept_create<R: RngCore + CryptoRng>(&mut self, id: LinkId, from: &TransportAddress, body: &[u8], rng: &mut R) {
        let mut r = Reader::new(body);
        let (Some(index), Some(client_eph)) = (r.u8(), r.array::<32>()) else { return };
        if !r.is_done() || index == 0 {
            return;
        }
        let secret = StaticSecret::random_from_rng(&mut *rng);
        let relay_eph = XPublic::from(&secret).to_bytes();
        let shared = secret.diffie_hellman(&XPublic::from(client_eph)).to_bytes();
        let keys = LayerKeys::derive(&shared, &client_eph, &relay_eph, index);
        let sig = self.identity.sign(&created_message(&client_eph, &relay_eph, id.1, index));
        self.links.insert(
            id,
            RelayLink {
                prev_address: from.clone(),
                index,
                next: None,
                role: EndRole::None,
                bridge: None,
                keys,
                back_counter: 0,
            },
        );
        let body = Writer::new().raw(&relay_eph).sig(&sig).finish();
        self.emit(from.clone(), Cell::new(id.1, CELL_CREATED, body));
    }

    fn destroy_link(&mut self, id: LinkId, notify_prev: bool, notify_next: bool) {
        let Some(link) = self.links.remove(&id) else { return };
        if notify_prev {
            self.emit(link.prev_address.clone(), Cell::new(id.1, CELL_DESTROY, vec![2]));
        }
        if let Some(next) = &link.next {
            self.reverse.remove(&(next.key, next.cid));
            if notify_next {
                self.emit(next.address.clone(), Cell::new(next.cid, CELL_DESTROY, vec![2]));
            }
        }
        self.intro_cookies.retain(|_, l| *l != id);
        self.rv_cookies.retain(|_, l| *l != id);
        if let Some(partner) = link.bridge {
            if let Some(p) = self.links.get_mut(&partner) {
                p.bridge = None;
            }
            self.destroy_link(partner, true, false);
        }
    }

    fn relay_forward<R: RngCore + CryptoRng>(&mut self, now: Millis, id: LinkId, cell: Cell, rng: &mut R) {
        if cell.cell_type == CELL_DESTROY {
            self.destroy_link(id, false, true);
            return;
        }
        if !cell.is_layered() {
            return;
        }
        let link = self.links.get(&id).expect("caller checked");
        let Some((origin, counter, ct)) = split_layered(&cell.body) else { return };
        let Some(mut plain) = link.keys.open(id.1, Direction::Forward, origin, counter, ct) else {
            self.events.push(AnonEvent::TamperDetected { link: id });
            self.destroy_link(id, true, true);
            return;
        };
        self.stats.layers_removed += 1;
        match &link.next {
            Some(next) if next.ready => {
                if self.config.tamper_relayed && !plain.is_empty() {
                    plain[0] ^= 0x01;
                }
                let (to, out_cid) = (next.address.clone(), next.cid);
                self.stats.cells_relayed += 1;
                self.emit(to, Cell::new(out_cid, cell.cell_type, join_layered(origin, counter, &plain)));
            }
            Some(_) => {}
            None => self.terminal(now, id, cell.cell_type, plain, rng),
        }
    }

    fn relay_backward(&mut self, id: LinkId, cell: Cell) {
        if cell.cell_type == CELL_DESTROY {
            self.destroy_link(id, true, false);
            return;
        }
        let Some(link) = self.links.get_mut(&id) else { return };
        if cell.cell_type == CELL_CREATED {
            let Some(next) = link.next.as_mut().filter(|n| !n.ready) else { return };
            next.ready = true;
            self.relay_send_back(&id, CELL_EXTENDED, &cell.body);
            return;
        }
        if !cell.is_layered() {
            return;
        }
        let Some((origin, counter, ct)) = split_layered(&cell.body) else { return };
        let sealed = link.keys.seal(id.1, Direction::Backward, origin, counter, ct);
        let to = link.prev_address.clone();
        self.stats.layers_added += 1;
        self.stats.cells_relayed += 1;
        self.emit(to, Cell::new(id.1, cell.cell_type, join_layered(origin, counter, &sealed)));
    }

    /// A cell this relay originates toward the circuit's client.
    fn relay_send_back(&mut self, id: &LinkId, cell_type: u8, plain: &[u8]) {
        let Some(link) = self.links.get_mut(id) else { return };
        let counter = link.back_counter;
        link.back_counter += 1;
        let ct = link.keys.seal(id.1, Direction::Backward, link.index, counter, plain);
        let (to, index) = (link.prev_address.clone(), link.index);
        self.stats.layers_added += 1;
        self.emit(to, Cell::new(id.1, cell_type, join_layered(index, counter, &ct)));
    }

    /// Forward cell at the end of a circuit.
    fn terminal<R: RngCore + CryptoRng>(&mut self, _now: Millis, id: LinkId, cell_type: u8, plain: Vec<u8>, _rng: &mut R) {
        match cell_type {
            CELL_EXTEND => {
                let mut r = Reader::new(&plain);
                let parsed = (|| Some((r.key()?, r.addr()?, r.u32()?, r.u8()?, r.array::<32>()?)))();
                let Some((key, addr, out_cid, index, client_eph)) = parsed else { return };
                if key == self.identity.public() || self.reverse.contains_key(&(key, out_cid)) {
                    return;
                }
                let link = self.links.get_mut(&id).expect("caller checked");
                link.next = Some(NextHop { key, address: addr.clone(), cid: out_cid, ready: false });
                self.reverse.insert((key, out_cid), id);
                let body = Writer::new().u8(index).raw(&client_eph).finish();
                self.emit(addr, Cell::new(out_cid, CELL_CREATE, body));
            }
            CELL_DATA => match plain.first() {
                Some(&SUB_EXIT_DATA) => {
                    self.events.push(AnonEvent::ExitData { link: id, data: plain[1..].to_vec() });
                }
                Some(&SUB_BRIDGED) => {
                    if let Some(partner) = self.links.get(&id).and_then(|l| l.bridge) {
                        self.stats.cells_relayed += 1;
                        self.relay_send_back(&partner, CELL_DATA, &plain);
                    }
                }
                _ => {}
            },
            CELL_INTRO_ESTABLISH => match plain.first() {
                Some(&SUB_ESTABLISH) if plain.len() == 1 + 32 + COOKIE_LEN => {
                    let cookie: [u8; COOKIE_LEN] = plain[33..].try_into().expect("length checked");
                    self.intro_cookies.insert(cookie, id);
                    if let Some(l) = self.links.get_mut(&id) {
                        l.role = EndRole::IntroPoint;
                    }
                    self.relay_send_back(&id, CELL_INTRO_ESTABLISH, &[SUB_ESTABLISHED]);
                }
                Some(&SUB_INTRODUCE1) if plain.len() > 1 + COOKIE_LEN => {
                    let cookie: [u8; COOKIE_LEN] = plain[1..1 + COOKIE_LEN].try_into().expect("length checked");
                    let ok = match self.intro_cookies.get(&cookie).copied() {
                        Some(service_link) if self.links.contains_key(&service_link) => {
                            let mut fwd = vec![SUB_INTRODUCE2];
                            fwd.extend_from_slice(&plain[1 + COOKIE_LEN..]);
                            self.stats.cells_relayed += 1;
                            self.relay_send_back(&service_link, CELL_INTRO_ESTABLISH, &fwd);
                            1
                        }
                        _ => 0,
                    };
                    self.relay_send_back(&id, CELL_INTRO_ESTABLISH, &[SUB_INTRODUCE_ACK, ok]);
                }
                _ => {}
            },
            CELL_RENDEZVOUS => match plain.first() {
                Some(&SUB_ESTABLISH) if plain.len() == 1 + COOKIE_LEN => {
                    let cookie: [u8; COOKIE_LEN] = plain[1..].try_into().expect("length checked");
                    self.rv_cookies.insert(cookie, id);
                    if let Some(l) = self.links.get_mut(&id) {
                        l.role = EndRole::RendezvousPoint;
                    }
                    self.relay_send_back(&id, CELL_RENDEZVOUS, &[SUB_ESTABLISHED]);
                }
                Some(&SUB_RENDEZVOUS1) if plain.len() > 1 + COOKIE_LEN => {
                    let cookie: [u8; COOKIE_LEN] = plain[1..1 + COOKIE_LEN].try_into().expect("length checked");
                    let Some(client_link) = self.rv_cookies.remove(&cookie) else { return };
                    if client_link == id || !self.links.contains_key(&client_link) {
                        return;
                    }
                    if let Some(l) = self.links.get_mut(&client_link) {
                        l.bridge = Some(id);
                    }
                    if let Some(l) = self.links.get_mut(&id) {
                        l.bridge = Some(client_link);
                        l.role = EndRole::RendezvousPoint;
                    }
                    let mut back = vec![SUB_RENDEZVOUS2];
                    back.extend_from_slice(&plain[1 + COOKIE_LEN..]);
                    self.relay_send_back(&client_link, CELL_RENDEZVOUS, &back);
                }
                _ => {}
            },
            _ => {}
        }
    }

    /// Backward cell (or handshake reply) on one of our own circuits.
    fn client_cell<R: RngCore + CryptoRng>(&mut self, now: Millis, cell: Cell, table: &mut PeerTable, rng: &mut R) {
        let cid = cell.circuit_id;
        match cell.cell_type {
            CELL_DESTROY => {
                let purpose = self.circuits[&cid].purpose;
                self.circuits.remove(&cid);
                self.events.push(AnonEvent::CircuitClosed { circuit_id: cid, purpose, error: AnonError::Destroyed });
                self.on_circuit_lost(cid, purpose, AnonError::Destroyed);
            }
            CELL_CREATED => {
                if !self.circuits[&cid].hops.is_empty() {
                    return;
                }
                self.complete_hop(now, cid, &cell.body, table, rng);
            }
            t if cell.is_layered() => {
                let Some((origin, counter, ct)) = split_layered(&cell.body) else { return };
                let c = &self.circuits[&cid];
                if origin == 0 || origin as usize > c.hops.len() {
                    return;
                }
                let mut data = ct.to_vec();
                for hop in &c.hops[..origin as usize] {
                    match hop.keys.open(hop.link_cid, Direction::Backward, origin, counter, &data) {
                        Some(p) => data = p,
                        None => {
                            self.fail_circuit(cid, AnonError::Destroyed);
                            return;
                        }
                    }
                }
                self.stats.layers_removed += origin as u64;
                if t == CELL_EXTENDED {
                    if origin as usize == c.hops.len() && c.state == CircuitState::Extending {
                        self.complete_hop(now, cid, &data, table, rng);
                    }
                } else {
                    self.client_payload(now, cid, t, data, table, rng);
                }
            }
            _ => {}
        }
    }

    fn complete_hop<R: RngCore + CryptoRng>(&mut self, now: Millis, cid: u32, body: &[u8], table: &mut PeerTable, rng: &mut R) {
        let c = self.circuits.get_mut(&cid).expect("caller checked");
        let Some(pending) = c.pending.take() else { return };
        let idx = c.hops.len();
        let (key, addr) = c.path[idx].clone();
        let mut r = Reader::new(body);
        let (Some(relay_eph), Some(sig)) = (r.array::<32>(), r.sig()) else {
            self.fail_circuit(cid, AnonError::Destroyed);
            return;
        };
        let index = (idx + 1) as u8;
        if !key.verify(&created_message(&pending.client_eph, &relay_eph, pending.link_cid, index), &sig) {
            self.fail_circuit(cid, AnonError::Destroyed);
            return;
        }
        let shared = pending.secret.diffie_hellman(&XPublic::from(relay_eph)).to_bytes();
        let keys = LayerKeys::derive(&shared, &pending.client_eph, &relay_eph, index);
        c.hops.push(Hop { key, address: addr, link_cid: pending.link_cid, keys });
        if c.hops.len() < c.path.len() {
            self.extend_next(now, cid, rng);
            return;
        }
        c.state = CircuitState::Ready;
        c.ready_at = Some(now);
        let (purpose, hops, latency) = (c.purpose, c.hops.len(), now - c.created_at);
        self.events.push(AnonEvent::CircuitReady { circuit_id: cid, hops, latency_ms: latency, purpose });
        self.on_ready(now, cid, purpose, table, rng);
    }

    fn on_ready<R: RngCore + CryptoRng>(&mut self, now: Millis, _cid: u32, purpose: Purpose, _table: &mut PeerTable, rng: &mut R) {
        match purpose {
            Purpose::ClientIntro(ch) => self.maybe_introduce(ch),
            Purpose::ServiceRendezvous(ch) => self.service_rendezvous(now, ch, rng),
            _ => {}
        }
    }

    fn client_payload<R: RngCore + CryptoRng>(
        &mut self,
        now: Millis,
        cid: u32,
        cell_type: u8,
        data: Vec<u8>,
        table: &mut PeerTable,
        rng: &mut R,
    ) {
        let purpose = self.circuits[&cid].purpose;
        match (cell_type, data.first().copied(), purpose) {
            (CELL_DATA, Some(SUB_EXIT_DATA), _) => {
                self.events.push(AnonEvent::CircuitData { circuit_id: cid, data: data[1..].to_vec() })
            }
            (CELL_DATA, Some(SUB_BRIDGED), Purpose::ClientRendezvous(ch) | Purpose::ServiceRendezvous(ch)) => {
                let Some(info) = self.channels.get(&ch) else { return };
                if let Some(plain) = info.e2e.as_ref().and_then(|e| e.open(&data[1..])) {
                    self.events.push(AnonEvent::ChannelData { channel: ch, data: plain });
                }
            }
            (CELL_RENDEZVOUS, Some(SUB_ESTABLISHED), Purpose::ClientRendezvous(ch)) => {
                if let Some(info) = self.channels.get_mut(&ch) {
                    info.rv_established = true;
                }
                self.maybe_introduce(ch);
            }
            (CELL_RENDEZVOUS, Some(SUB_RENDEZVOUS2), Purpose::ClientRendezvous(ch)) => {
                self.client_rendezvous2(now, ch, &data[1..]);
            }
            (CELL_INTRO_ESTABLISH, Some(SUB_INTRODUCE_ACK), Purpose::ClientIntro(ch)) => {
                if data.get(1) == Some(&0) {
                    self.fail_channel(ch, AnonError::NoIntroductionPoint);
                } else {
                    // The introduction circuit has done its job.
                    if let Some(info) = self.channels.get_mut(&ch) {
                        info.intro_circuit = None;
                    }
                    self.close_circuit(cid);
                }
            }
            (CELL_INTRO_ESTABLISH, Some(SUB_INTRODUCE2), Purpose::ServiceIntro) => {
                self.service_introduce2(now, &data[1..], table, rng);
            }
            _ => {}
        }
    }

    /// Publishes intro points on ready pool circuits. The caller gossips the result.
    pub fn establish_hidden_service<R: RngCore + CryptoRng>(&mut self, rng: &mut R) -> Result<RendezvousInfo, AnonError> {
        let chosen: Vec<u32> = self
            .circuits
            .values()
            .filter(|c| c.purpose == Purpose::Pool && c.state == CircuitState::Ready)
            .map(|c| c.circuit_id)
            .take(self.config.intro_points.max(1))
            .collect();
        if chosen.is_empty() {
            return Err(AnonError::NoReadyCircuit);
        }
        let mut cookie = [0u8; COOKIE_LEN];
        rng.fill(&mut cookie);
        let mut points = Vec::new();
        for cid in chosen {
            let c = self.circuits.get_mut(&cid).expect("listed above");
            c.purpose = Purpose::ServiceIntro;
            points.push(c.path.last().expect("ready circuits have hops").clone());
            let mut plain = vec![SUB_ESTABLISH];
            plain.extend_from_slice(self.identity.public().as_bytes());
            plain.extend_from_slice(&cookie);
            self.send_forward(cid, CELL_INTRO_ESTABLISH, &plain);
        }
        let info = RendezvousInfo { service_key: self.identity.public(), introduction_points: points, cookie };
        self.service = Some(info.clone());
        Ok(info)
    }

    /// Starts a channel to a hidden service; `ChannelOpen` follows on success.
    pub fn connect_hidden<R: RngCore + CryptoRng>(
        &mut self,
        now: Millis,
        info: &RendezvousInfo,
        table: &mut PeerTable,
        rng: &mut R,
    ) -> Result<u64, AnonError> {
        let intro_keys: Vec<PublicKey> = info.introduction_points.iter().map(|(k, _)| *k).collect();
        let rv_cid = self
            .circuits
            .values()
            .filter(|c| c.purpose == Purpose::Pool && c.state == CircuitState::Ready)
            .find(|c| {
                let exit = c.exit().expect("ready circuits have hops");
                !intro_keys.contains(exit) && *exit != info.service_key
            })
            .map(|c| c.circuit_id)
            .ok_or(AnonError::NoReadyCircuit)?;
        let rp = self.circuits[&rv_cid].path.last().expect("non-empty").clone();

        let mut points = info.introduction_points.clone();
        points.shuffle(rng);
        let middle = self.config.hop_count.clamp(1, 3) - 1;
        let mut intro_path = None;
        for (ik, ia) in points {
            let mut exclude = vec![ik, info.service_key, rp.0, self.identity.public()];
            exclude.extend(self.circuits[&rv_cid].path.iter().map(|(k, _)| *k));
            exclude.extend(self.config.excluded_relays.iter().copied());
            let mut fallback = vec![ik, info.service_key, self.identity.public()];
            fallback.extend(self.config.excluded_relays.iter().copied());
            let Ok(mut path) = select_relays(middle, table, &exclude, rng)
                .or_else(|_| select_relays(middle, table, &fallback, rng))
            else {
                continue;
            };
            path.push((ik, ia));
            intro_path = Some(path);
            break;
        }
        let intro_path = intro_path.ok_or(AnonError::NoIntroductionPoint)?;

        let channel: u64 = loop {
            let id = rng.gen();
            if !self.channels.contains_key(&id) {
                break id;
            }
        };
        let intro_cid = self.build_circuit(now, intro_path, Purpose::ClientIntro(channel), rng)?;
        let mut rv_cookie = [0u8; COOKIE_LEN];
        rng.fill(&mut rv_cookie);
        let secret = StaticSecret::random_from_rng(&mut *rng);
        let client_eph = XPublic::from(&secret).to_bytes();
        self.channels.insert(
            channel,
            ChannelInfo {
                role: ChannelRole::Client,
                state: ChannelState::Pending,
                rendezvous_circuit: Some(rv_cid),
                intro_circuit: Some(intro_cid),
                rendezvous_point: rp,
                service_key: info.service_key,
                opened_at: None,
                rv_cookie,
                intro_cookie: info.cookie,
                secret: Some(secret),
                client_eph,
                rv_established: false,
                e2e: None,
                deadline: now + self.config.rendezvous_timeout_ms,
            },
        );
        self.circuits.get_mut(&rv_cid).expect("checked").purpose = Purpose::ClientRendezvous(channel);
        let mut plain = vec![SUB_ESTABLISH];
        plain.extend_from_slice(&rv_cookie);
        self.send_forward(rv_cid, CELL_RENDEZVOUS, &plain);
        Ok(channel)
    }

    fn maybe_introduce(&mut self, ch: u64) {
        let Some(info) = self.channels.get(&ch) else { return };
        let Some(intro_cid) = info.intro_circuit else { return };
        let intro_ready = self.circuits.get(&intro_cid).is_some_and(|c| c.state == CircuitState::Ready);
        if info.state != ChannelState::Pending || !info.rv_established || !intro_ready {
            return;
        }
        let mut w = Writer::new();
        w.u8(SUB_INTRODUCE1)
            .raw(&info.intro_cookie)
            .raw(&info.rv_cookie)
            .key(&info.rendezvous_point.0)
            .addr(&info.rendezvous_point.1)
            .raw(&info.client_eph);
        let plain = w.finish();
        self.send_forward(intro_cid, CELL_INTRO_ESTABLISH, &plain);
    }

    fn service_introduce2<R: RngCore + CryptoRng>(&mut self, now: Millis, blob: &[u8], table: &mut PeerTable, rng: &mut R) {
        let Some(service) = self.service.clone() else { return };
        let mut r = Reader::new(blob);
        let parsed = (|| Some((r.array::<COOKIE_LEN>()?, r.key()?, r.addr()?, r.array::<32>()?)))();
        let Some((rv_cookie, rp_key, rp_addr, client_eph)) = parsed else { return };
        if self.channels.values().any(|c| c.rv_cookie == rv_cookie) {
            return;
        }
        let middle = self.config.hop_count.clamp(1, 3) - 1;
        let mut exclude = vec![rp_key, self.identity.public()];
        exclude.extend(self.config.excluded_relays.iter().copied());
        let Ok(mut path) = select_relays(middle, table, &exclude, rng) else { return };
        path.push((rp_key, rp_addr.clone()));
        let channel: u64 = loop {
            let id = rng.gen();
            if !self.channels.contains_key(&id) {
                break id;
            }
        };
        let Ok(cid) = self.build_circuit(now, path, Purpose::ServiceRendezvous(channel), rng) else { return };
        self.channels.insert(
            channel,
            ChannelInfo {
                role: ChannelRole::Service,
                state: ChannelState::Pending,
                rendezvous_circuit: Some(cid),
                intro_circuit: None,
                rendezvous_point: (rp_key, rp_addr),
                service_key: service.service_key,
                opened_at: None,
                rv_cookie,
                intro_cookie: service.cookie,
                secret: None,
                client_eph,
                rv_established: false,
                e2e: None,
                deadline: now + self.config.rendezvous_timeout_ms,
            },
        );
    }

    fn service_rendezvous<R: RngCore + CryptoRng>(&mut self, now: Millis, ch: u64, rng: &mut R) {
        let Some(info) = self.channels.get_mut(&ch) else { return };
        let Some(cid) = info.rendezvous_circuit else { return };
        let secret = StaticSecret::random_from_rng(&mut *rng);
        let service_eph = XPublic::from(&secret).to_bytes();
        let shared = secret.diffie_hellman(&XPublic::from(info.client_eph)).to_bytes();
        info.e2e = Some(EndToEnd::derive(&shared, &info.client_eph, &service_eph, false));
        let sig = self.identity.sign(&rendezvous_message(&info.client_eph, &service_eph, &info.rv_cookie));
        let plain = Writer::new().u8(SUB_RENDEZVOUS1).raw(&info.rv_cookie).raw(&service_eph).sig(&sig).finish();
        info.state = ChannelState::Open;
        info.opened_at = Some(now);
        self.send_forward(cid, CELL_RENDEZVOUS, &plain);
        self.events.push(AnonEvent::ChannelOpen { channel: ch, role: ChannelRole::Service });
    }

    fn client_rendezvous2(&mut self, now: Millis, ch: u64, blob: &[u8]) {
        let Some(info) = self.channels.get_mut(&ch) else { return };
        if info.state != ChannelState::Pending {
            return;
        }
        let mut r = Reader::new(blob);
        let (Some(service_eph), Some(sig)) = (r.array::<32>(), r.sig()) else { return };
        if !info.service_key.verify(&rendezvous_message(&info.client_eph, &service_eph, &info.rv_cookie), &sig) {
            self.fail_channel(ch, AnonError::Destroyed);
            return;
        }
        let Some(secret) = info.secret.take() else { return };
        let shared = secret.diffie_hellman(&XPublic::from(service_eph)).to_bytes();
        info.e2e = Some(EndToEnd::derive(&shared, &info.client_eph, &service_eph, true));
        info.state = ChannelState::Open;
        info.opened_at = Some(now);
        self.events.push(AnonEvent::ChannelOpen { channel: ch, role: ChannelRole::Client });
    }

    /// Sends end-to-end encrypted data over an open channel.
    pub fn channel_send(&mut self, ch: u64, data: &[u8]) -> Result<(), AnonError> {
        let info = self.channels.get_mut(&ch).ok_or(AnonError::UnknownChannel)?;
        if info.state != ChannelState::Open {
            return Err(AnonError::ChannelNotOpen);
        }
        let cid = info.rendezvous_circuit.ok_or(AnonError::ChannelNotOpen)?;
        let hops = self.circuits.get(&cid).map(|c| c.hops.len()).ok_or(AnonError::ChannelNotOpen)?;
        if data.len() + 1 + 8 + LAYER_TAG * (hops + 1) + LAYER_HEADER > MAX_CELL_BODY {
            return Err(AnonError::PayloadTooLarge);
        }
        let ct = info.e2e.as_mut().ok_or(AnonError::ChannelNotOpen)?.seal(data);
        let mut plain = vec![SUB_BRIDGED];
        plain.extend_from_slice(&ct);
        self.send_forward(cid, CELL_DATA, &plain);
        Ok(())
    }

    pub fn close_channel(&mut self, ch: u64) {
        self.fail_channel(ch, AnonError::Destroyed);
    }

    /// Timeouts and pool upkeep.
    pub fn tick<R: RngCore + CryptoRng>(&mut self, now: Millis, table: &mut PeerTable, rng: &mut R) {
        let expired: Vec<u32> = self
            .circuits
            .values()
            .filter(|c| c.state == CircuitState::Extending && now >= c.deadline)
            .map(|c| c.circuit_id)
            .collect();
        for cid in expired {
            let c = &self.circuits[&cid];
            let involved = c.hops.len() + 1;
            for (k, _) in c.path.iter().take(involved) {
                if let Some(p) = table.get_mut(k) {
                    p.relay_failures += 1;
                }
            }
            self.fail_circuit(cid, AnonError::BuildTimeout);
        }
        let late: Vec<u64> = self
            .channels
            .iter()
            .filter(|(_, c)| c.state == ChannelState::Pending && now >= c.deadline)
            .map(|(id, _)| *id)
            .collect();
        for ch in late {
            self.fail_channel(ch, AnonError::RendezvousTimeout);
        }
        self.channels.retain(|_, c| c.state != ChannelState::Closed);

        if self.config.pool_enabled && now >= self.next_maintain {
            self.maintain_pool(now, table, rng);
            self.next_maintain = now + self.config.maintain_interval_ms;
        }
    }

    /// Tops the pool up to `pool_min` ready-or-building circuits.
    pub fn maintain_pool<R: RngCore + CryptoRng>(&mut self, now: Millis, table: &mut PeerTable, rng: &mut R) {
        let pool: Vec<&Circuit> = self.circuits.values().filter(|c| c.purpose == Purpose::Pool).collect();
        let mut have = pool.len();
        let target = self.config.pool_min.min(self.config.pool_max);
        let hops = self.config.hop_count.clamp(1, 3);
        let mut exclude = vec![self.identity.public()];
        exclude.extend(self.config.excluded_relays.iter().copied());
        while have < target {
            let Ok(path) = select_relays(hops, table, &exclude, rng) else { break };
            if self.build_circuit(now, path, Purpose::Pool, rng).is_err() {
                break;
            }
            have += 1;
        }
    }

    pub fn next_deadline(&self) -> Option<Millis> {
        let circuits = self.circuits.values().filter(|c| c.state == CircuitState::Extending).map(|c| c.deadline);
        let channels = self.channels.values().filter(|c| c.state == ChannelState::Pending).map(|c| c.deadline);
        let pool = self.config.pool_enabled.then_some(self.next_maintain);
        circuits.chain(channels).chain(pool).min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpki::{generate_keypair, Peer};
    use crate::overlay::rng_from_seed;

    fn table_with(samples: &[(u8, f64)]) -> PeerTable {
        let mut t = PeerTable::new(30, vec![]);
        for (i, rtt) in samples {
            let key = generate_keypair(Some([*i; 32])).public();
            let mut p = Peer::new(key, TransportAddress::Sim(*i as u64), 0);
            for s in 0..3 {
                p.record_rtt(s, *rtt, 5.0);
            }
            t.verified.insert(key, p);
        }
        t
    }

    #[test]
    fn three_candidates_three_hops() {
        let t = table_with(&[(1, 10.0), (2, 50.0), (3, 90.0)]);
        let picks = select_relays(3, &t, &[], &mut rng_from_seed(1)).unwrap();
        let mut keys: Vec<PublicKey> = picks.iter().map(|(k, _)| *k).collect();
        keys.sort();
        let mut all: Vec<PublicKey> = t.keys().copied().collect();
        all.sort();
        assert_eq!(keys, all);
    }

    #[test]
    fn one_per_band() {
        let t = table_with(&[(1, 10.0), (2, 11.0), (3, 12.0), (4, 200.0), (5, 210.0), (6, 220.0)]);
        for seed in 0..20 {
            let picks = select_relays(2, &t, &[], &mut rng_from_seed(seed)).unwrap();
            let rtts: Vec<f64> = picks.iter().map(|(k, _)| t.get(k).unwrap().median_rtt().unwrap()).collect();
            assert_eq!(rtts.iter().filter(|r| **r < 100.0).count(), 1);
        }
    }

    #[test]
    fn fraudulent_latency_excluded() {
        let mut t = table_with(&[(1, 10.0), (2, 50.0)]);
        let k2 = generate_keypair(Some([2; 32])).public();
        let p = t.get_mut(&k2).unwrap();
        p.advertise_min_rtt(50.0);
        p.record_rtt(10, 1.0, 5.0);
        assert!(p.latency_fraud);
        assert_eq!(
            select_relays(2, &t, &[], &mut rng_from_seed(1)),
            Err(AnonError::InsufficientCandidates { needed: 2, available: 1 })
        );
    }

    #[test]
    fn few_samples_not_eligible() {
        let mut t = PeerTable::new(30, vec![]);
        let key = generate_keypair(Some([1; 32])).public();
        t.verified.insert(key, Peer::new(key, TransportAddress::Sim(1), 0));
        assert!(select_relays(1, &t, &[], &mut rng_from_seed(1)).is_err());
    }

    #[test]
    fn rendezvous_info_codec() {
        let info = RendezvousInfo {
            service_key: PublicKey([1; 32]),
            introduction_points: vec![(PublicKey([2; 32]), TransportAddress::Sim(2))],
            cookie: [9; COOKIE_LEN],
        };
        assert_eq!(RendezvousInfo::from_bytes(&info.to_bytes()), Some(info));
    }

    #[test]
    fn empty_table_gives_empty_pool() {
        let mut a = Anon::new(AnonConfig::default(), generate_keypair(Some([1; 32])));
        let mut t = PeerTable::new(30, vec![]);
        a.tick(0, &mut t, &mut rng_from_seed(1));
        assert_eq!(a.circuits().count(), 0);
        assert!(a.drain_out().is_empty());
    }
}
