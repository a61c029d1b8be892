//! Sybil identities: they introduce only each other, pad their latency and
//! swallow relayed cells.

use std::collections::{HashSet, VecDeque};

use ipv8_core::dpki::{KeyPair, PublicKey};
use ipv8_core::node::OVERLAY_DISCOVERY;
use ipv8_core::overlay::DiscoveryMessage;
use ipv8_core::wire::{decode_envelope, encode_envelope, Message, OverlayId, SimFabric, TransportAddress};
use ipv8_core::Millis;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Upper bound of the per-identity artificial delay, ms.
pub const MAX_FAKE_DELAY_MS: Millis = 300;
/// Chance that a pong goes out without the artificial delay.
pub const LEAK_PROBABILITY: f64 = 0.3;

pub struct SybilActor {
    keypair: KeyPair,
    index: u64,
    siblings: Vec<(PublicKey, u64)>,
    fake_delay: Millis,
    leak_probability: f64,
    seq: u64,
    rng: ChaCha8Rng,
    discovery: OverlayId,
    known: HashSet<OverlayId>,
    punctured: HashSet<u64>,
    // Bounded so a long run does not grow without limit.
    punctured_order: VecDeque<u64>,
}

impl SybilActor {
    pub fn new(keypair: KeyPair, index: u64, siblings: Vec<(PublicKey, u64)>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fake_delay = rng.gen_range(0..MAX_FAKE_DELAY_MS);
        let discovery = OverlayId::from_name(OVERLAY_DISCOVERY);
        let known = ["discovery", "tunnel", "identity", "revocation"].into_iter().map(OverlayId::from_name).collect();
        SybilActor {
            keypair,
            index,
            siblings: siblings.into_iter().filter(|(_, i)| *i != index).collect(),
            fake_delay,
            leak_probability: LEAK_PROBABILITY,
            seq: 0,
            rng,
            discovery,
            known,
            punctured: HashSet::new(),
            punctured_order: VecDeque::new(),
        }
    }

    pub fn with_leak_probability(mut self, p: f64) -> Self {
        self.leak_probability = p;
        self
    }

    pub fn public(&self) -> PublicKey {
        self.keypair.public()
    }

    pub fn fake_delay(&self) -> Millis {
        self.fake_delay
    }

    fn send(&mut self, fabric: &mut SimFabric, to: u64, msg: DiscoveryMessage, extra: Millis) {
        self.seq += 1;
        let m = Message { overlay: self.discovery, msg_type: msg.msg_type(), seq: self.seq, payload: msg.payload() };
        let bytes = encode_envelope(&m, &self.keypair).expect("discovery payloads are small");
        fabric.send_delayed(self.index, to, bytes, extra);
    }

    /// Handles one datagram. Returns false when it was swallowed.
    pub fn handle(&mut self, _now: Millis, from: u64, bytes: &[u8], fabric: &mut SimFabric) -> bool {
        let Ok(env) = decode_envelope(bytes, &self.known) else { return false };
        if env.overlay != self.discovery {
            return false;
        }
        let Some(msg) = DiscoveryMessage::parse(env.msg_type, &env.payload) else { return false };
        match msg {
            DiscoveryMessage::IntroRequest { nonce } => {
                let introduced = self.siblings.choose(&mut self.rng).copied();
                if let Some((_, sib)) = introduced {
                    let req = DiscoveryMessage::PunctureRequest {
                        requester: env.sender_key,
                        address: TransportAddress::Sim(from),
                    };
                    self.send(fabric, sib, req, 0);
                }
                let resp = DiscoveryMessage::IntroResponse {
                    nonce,
                    responder: TransportAddress::Sim(self.index),
                    observed: TransportAddress::Sim(from),
                    introduced: introduced.map(|(k, i)| (k, TransportAddress::Sim(i))),
                };
                self.send(fabric, from, resp, 0);
            }
            DiscoveryMessage::PunctureRequest { address, .. } => {
                if let Some(to) = address.sim_index() {
                    self.send(fabric, to, DiscoveryMessage::Puncture, 0);
                }
            }
            DiscoveryMessage::Puncture => {
                if self.punctured.insert(from) {
                    self.punctured_order.push_back(from);
                    if self.punctured_order.len() > 4096 {
                        let old = self.punctured_order.pop_front().expect("non-empty");
                        self.punctured.remove(&old);
                    }
                    self.send(fabric, from, DiscoveryMessage::Puncture, 0);
                }
            }
            DiscoveryMessage::Ping { nonce } => {
                let rtt = 2 * fabric.latency(self.index, from);
                let claimed = (rtt + self.fake_delay).max(1) as u32;
                let extra = if self.rng.gen_bool(self.leak_probability) { 0 } else { self.fake_delay };
                let pong = DiscoveryMessage::Pong { nonce, claimed_rtt_ms: Some(claimed) };
                self.send(fabric, from, pong, extra);
            }
            DiscoveryMessage::IntroResponse { .. } | DiscoveryMessage::Pong { .. } | DiscoveryMessage::Gossip(_) => {}
        }
        true
    }
}
