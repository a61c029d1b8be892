//! A warmed-up honest network with a subject, an attester and a verifier,
//! plus the identity flows run over it.

use std::collections::BTreeSet;

use ipv8_core::anon::{AnonEvent, LinkId};
use ipv8_core::dpki::{generate_keypair, PublicKey};
use ipv8_core::node::{NodeConfig, NodeEvent};
use ipv8_core::ssi::{AttributeOptions, Channel, Outcome, Pseudonym, Triple};
use ipv8_core::wire::TransportAddress;
use ipv8_core::{Hash32, Millis};
use rand::SeedableRng;
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};

use super::link_random_apart;
use crate::latency::LatencySource;
use crate::network::{actor_seed, SimNetwork};

/// How long any single flow step may take before it counts as failed.
pub const STEP_LIMIT_MS: Millis = 120_000;

#[derive(Debug, Clone)]
pub struct WorldParams {
    pub nodes: usize,
    pub seed: u64,
    pub latency: LatencySource,
    /// Neighbours each node links to at setup; degrees average twice this.
    pub links_per_node: usize,
    pub warmup_ms: Millis,
    pub warmup_probe_ms: Millis,
    pub hop_count: usize,
    pub pool: bool,
    /// Pairs that are never neighbours and never relay for each other.
    pub apart: Vec<(usize, usize)>,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            nodes: 50,
            seed: 1,
            latency: LatencySource::Synthetic,
            links_per_node: 10,
            warmup_ms: 30_000,
            warmup_probe_ms: 250,
            hop_count: 2,
            pool: true,
            apart: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Direct,
    Covert,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Direct => "direct",
            Mode::Covert => "covert",
        }
    }
}

/// Cost of one step, measured on the fabric.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Cost {
    pub ms: Millis,
    pub bytes: u64,
    pub datagrams: u64,
}

pub struct World {
    pub net: SimNetwork,
    pub subject: usize,
    pub attester: usize,
    pub verifier: usize,
    pub subject_pseudonym: PublicKey,
    pub attester_pseudonym: PublicKey,
    /// Rendezvous bridges seen right after each covert channel opened.
    pub bridges: Vec<BridgedPath>,
    published: bool,
}

fn node_config(p: &WorldParams) -> NodeConfig {
    let mut c = NodeConfig::default();
    c.overlay.walking = false;
    c.overlay.liveness = false;
    c.overlay.probe_interval_ms = p.warmup_probe_ms;
    c.anon.hop_count = p.hop_count;
    c.anon.pool_enabled = p.pool;
    c.ssi.auto_approve = true;
    c
}

/// Waits for an event from `node` that `pick` accepts.
pub fn wait_for<T>(net: &mut SimNetwork, node: usize, limit: Millis, mut pick: impl FnMut(&NodeEvent) -> Option<T>) -> Option<T> {
    let mut found = None;
    net.run_until_with(limit, |net| {
        for (_, who, ev) in net.events.drain(..) {
            if found.is_none() && who == node {
                found = pick(&ev);
            }
        }
        found.is_some()
    });
    found
}

impl World {
    /// Nodes 0, 1 and 2 are subject, attester and verifier.
    pub fn build(p: &WorldParams) -> Result<World, String> {
        let mut net = SimNetwork::new(p.latency.build(p.seed)?, p.seed);
        let config = node_config(p);
        let ids: Vec<usize> = (0..p.nodes)
            .map(|i| {
                let mut c = config.clone();
                for &(x, y) in &p.apart {
                    if i == x || i == y {
                        c.anon.excluded_relays.push(net.key_for(if i == x { y } else { x }));
                    }
                }
                net.add_node(c)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x3011d);
        link_random_apart(&mut net, &ids, p.links_per_node, &p.apart, &mut rng);
        net.run_until(p.warmup_ms);
        for &i in &ids {
            net.with_node(i, |n, _| n.overlay.config.probe_interval_ms = 0);
        }
        let pseudonym_for = |net: &mut SimNetwork, i: usize| {
            let kp = generate_keypair(Some(actor_seed(p.seed, 1_000_000 + i)));
            net.with_node(i, |n, now| n.with_ssi(now, |s| s.add_pseudonym(Pseudonym::from_keypair(kp))))
        };
        let subject_pseudonym = pseudonym_for(&mut net, 0);
        let attester_pseudonym = pseudonym_for(&mut net, 1);
        net.events.clear();
        Ok(World { net, subject: 0, attester: 1, verifier: 2, subject_pseudonym, attester_pseudonym, bridges: Vec::new(), published: false })
    }

    pub fn key(&self, i: usize) -> PublicKey {
        self.net.node(i).public()
    }

    fn mark(&self) -> (Millis, u64, u64) {
        let l = self.net.ledger();
        (self.net.now(), l.bytes_sent, l.sent)
    }

    fn cost_since(&self, m: (Millis, u64, u64)) -> Cost {
        let l = self.net.ledger();
        Cost { ms: self.net.now() - m.0, bytes: l.bytes_sent - m.1, datagrams: l.sent - m.2 }
    }

    /// Subject and attester become hidden services; waits until the
    /// verifier and subject hold the descriptors they need.
    pub fn publish_services(&mut self) -> Result<(), String> {
        if self.published {
            return Ok(());
        }
        for svc in [self.subject, self.attester] {
            self.net
                .with_node(svc, |n, now| n.publish_hidden_service(now))
                .map_err(|e| format!("node {svc} cannot publish: {e}"))?;
        }
        let (s_key, a_key) = (self.key(self.subject), self.key(self.attester));
        let (s, v) = (self.subject, self.verifier);
        let limit = self.net.now() + STEP_LIMIT_MS;
        self.net
            .run_until_with(limit, |net| {
                net.events.clear();
                net.node(s).rendezvous.contains_key(&a_key) && net.node(v).rendezvous.contains_key(&s_key)
            })
            .ok_or("descriptors did not spread")?;
        // Let the services refill their circuit pools before anything is measured.
        let settle = self.net.now() + 10_000;
        self.net.run_until(settle);
        self.net.events.clear();
        self.published = true;
        Ok(())
    }

    fn set_covert(&mut self, covert: bool) {
        for i in [self.subject, self.attester, self.verifier] {
            self.net.with_node(i, |n, _| n.ssi.config_mut().covert_required = covert);
        }
    }

    /// Opens a covert channel from `client` to the service run by `service`.
    pub fn open_channel(&mut self, client: usize, service: usize) -> Result<(u64, Cost), String> {
        let m = self.mark();
        let key = self.key(service);
        let ch = self.net.with_node(client, |n, now| n.connect_hidden(now, &key)).map_err(|e| format!("connect: {e}"))?;
        let limit = self.net.now() + STEP_LIMIT_MS;
        let ok = wait_for(&mut self.net, client, limit, |ev| match ev {
            NodeEvent::Anon(AnonEvent::ChannelOpen { channel, .. }) if *channel == ch => Some(true),
            NodeEvent::Anon(AnonEvent::ChannelFailed { channel, .. }) if *channel == ch => Some(false),
            _ => None,
        });
        match ok {
            Some(true) => {
                let cost = self.cost_since(m);
                for b in bridged_paths(&self.net) {
                    if !self.bridges.contains(&b) {
                        self.bridges.push(b);
                    }
                }
                Ok((ch, cost))
            }
            Some(false) => Err("channel failed".into()),
            None => Err("channel timed out".into()),
        }
    }

    fn channel_to(&mut self, mode: Mode, client: usize, service: usize) -> Result<(Channel, Cost), String> {
        match mode {
            Mode::Covert => self.open_channel(client, service).map(|(ch, c)| (Channel::Covert(ch), c)),
            Mode::Direct => {
                let (key, addr) = (self.key(service), TransportAddress::Sim(service as u64));
                self.net.with_node(client, |n, _| n.add_contact(key, addr));
                Ok((Channel::Direct(key), Cost::default()))
            }
        }
    }

    fn close(&mut self, node: usize, channel: Channel) {
        if let Channel::Covert(ch) = channel {
            self.net.with_node(node, |n, now| n.with_anon(now, |a, _, _| a.close_channel(ch)));
        }
    }

    /// A.1 on the subject; no traffic.
    pub fn add_attribute(&mut self, name: &str, algorithm: &str, version: &str, value: u64) -> Result<Hash32, String> {
        let sp = self.subject_pseudonym;
        self.net.with_node(self.subject, |n, now| {
            let mut rng = ChaCha20Rng::from_rng(n.rng()).expect("chacha reseed");
            n.with_ssi(now, |s| {
                let p = s.pseudonym_mut(&sp).expect("subject pseudonym");
                p.add_attribute(name, algorithm, version, value, AttributeOptions::default(), &mut rng)
                    .map(|(attr, _)| attr.hash())
                    .map_err(|e| e.to_string())
            })
        })
    }

    /// A.2: the subject asks the attester to sign the attribute's metadata.
    /// Returns the channel set-up cost and the exchange cost.
    pub fn attest(&mut self, mode: Mode, attribute: &Hash32) -> Result<(Cost, Cost), String> {
        self.set_covert(mode == Mode::Covert);
        let (channel, setup) = self.channel_to(mode, self.subject, self.attester)?;
        let m = self.mark();
        let (sp, ap) = (self.subject_pseudonym, self.attester_pseudonym);
        let rid = self
            .net
            .with_node(self.subject, |n, now| n.with_ssi(now, |s| s.request_attestation(channel, &sp, ap, attribute)))
            .map_err(|e| e.to_string())?;
        let limit = self.net.now() + STEP_LIMIT_MS;
        let got = wait_for(&mut self.net, self.subject, limit, |ev| match ev {
            NodeEvent::Attested { request_id, .. } if *request_id == rid => Some(()),
            _ => None,
        });
        let cost = self.cost_since(m);
        self.close(self.subject, channel);
        got.ok_or("attestation did not arrive")?;
        Ok((setup, cost))
    }

    /// B.1 and B.2: the verifier checks the subject's attribute.
    pub fn verify(
        &mut self,
        mode: Mode,
        triple: Triple,
        range: Option<(u64, u64)>,
        rounds: u32,
    ) -> Result<(Cost, Cost, Outcome), String> {
        self.set_covert(mode == Mode::Covert);
        let (channel, setup) = self.channel_to(mode, self.verifier, self.subject)?;
        let m = self.mark();
        let sp = self.subject_pseudonym;
        let rid = self
            .net
            .with_node(self.verifier, |n, now| n.with_ssi(now, |s| s.request_verification(now, channel, sp, triple, range, rounds)))
            .map_err(|e| e.to_string())?;
        let limit = self.net.now() + STEP_LIMIT_MS;
        let outcome = wait_for(&mut self.net, self.verifier, limit, |ev| match ev {
            NodeEvent::Verified { request_id, outcome } if *request_id == rid => Some(*outcome),
            _ => None,
        });
        let cost = self.cost_since(m);
        self.close(self.verifier, channel);
        let outcome = outcome.ok_or("verification did not complete")?;
        Ok((setup, cost, outcome))
    }
}

/// A rendezvous bridge traced back to both circuit origins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BridgedPath {
    /// Node indices from one origin, through the rendezvous point, to the other.
    pub nodes: Vec<usize>,
}

impl BridgedPath {
    pub fn endpoints(&self) -> (usize, usize) {
        (self.nodes[0], *self.nodes.last().expect("non-empty"))
    }

    /// Nodes whose own view of this path includes both endpoint addresses.
    pub fn observers_of_both(&self) -> Vec<usize> {
        let (a, b) = self.endpoints();
        let n = self.nodes.len();
        let mut out = BTreeSet::new();
        for i in 1..n - 1 {
            let me = self.nodes[i];
            let mut seen: BTreeSet<usize> = [self.nodes[i - 1], self.nodes[i + 1]].into();
            if me == a || me == b {
                seen.insert(me);
            }
            if seen.contains(&a) && seen.contains(&b) {
                out.insert(me);
            }
        }
        out.into_iter().collect()
    }
}

/// Follows a relay link at `at` back to the node that built the circuit,
/// collecting the relays in between (nearest first).
pub fn trace_origin(net: &SimNetwork, at: usize, link: &LinkId) -> Option<(usize, Vec<usize>)> {
    let mut relays = vec![at];
    let (mut node, mut id) = (at, *link);
    for _ in 0..8 {
        let here_key = net.node(node).public();
        let rl = net.node(node).anon.relay_links().find(|(k, _)| **k == id)?.1;
        let prev = rl.prev_address.sim_index()? as usize;
        if !net.is_node(prev) {
            return None;
        }
        let p = net.node(prev);
        let own = p.anon.circuits().any(|c| c.hops.first().is_some_and(|h| h.key == here_key && h.link_cid == id.1));
        if own {
            relays.reverse();
            return Some((prev, relays));
        }
        let (next_id, _) =
            p.anon.relay_links().find(|(_, l)| l.next.as_ref().is_some_and(|n| n.key == here_key && n.cid == id.1))?;
        id = *next_id;
        node = prev;
        relays.push(node);
    }
    None
}

/// Every live rendezvous bridge in the network.
pub fn bridged_paths(net: &SimNetwork) -> Vec<BridgedPath> {
    let mut out = Vec::new();
    for (rp, n) in net.nodes() {
        for (id, link) in n.anon.relay_links() {
            let Some(other) = link.bridge else { continue };
            if *id > other {
                continue;
            }
            let (Some((o1, mut r1)), Some((o2, r2))) = (trace_origin(net, rp, id), trace_origin(net, rp, &other)) else {
                continue;
            };
            // r1 runs origin-side first and ends at the rendezvous point; r2 likewise.
            let mut nodes = vec![o1];
            nodes.append(&mut r1);
            nodes.extend(r2.iter().rev().skip(1));
            nodes.push(o2);
            out.push(BridgedPath { nodes });
        }
    }
    out
}
