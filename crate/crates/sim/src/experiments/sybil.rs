//! Time for a bootstrapping node to get a circuit ending at an honest relay,
//! in a 100-peer population with a varying Sybil share.

use ipv8_core::anon::AnonEvent;
use ipv8_core::dpki::{generate_keypair, PublicKey};
use ipv8_core::node::NodeEvent;
use ipv8_core::wire::TransportAddress;
use ipv8_core::Millis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{quiet_config, seed_list, Outcome};
use crate::config::{ConfigError, KvConfig};
use crate::latency::LatencySource;
use crate::network::{actor_seed, SimNetwork};
use crate::report::{csv_bytes, summarize, Summary};
use crate::sybil::{SybilActor, LEAK_PROBABILITY};

#[derive(Debug, Clone)]
pub struct SybilConfig {
    pub population: usize,
    pub fractions: Vec<f64>,
    pub seed: u64,
    pub runs: usize,
    pub limit_ms: Millis,
    pub leak_probability: f64,
    pub latency: LatencySource,
}

impl Default for SybilConfig {
    fn default() -> Self {
        SybilConfig {
            population: 100,
            fractions: vec![0.0, 0.25, 0.5, 0.75, 0.9, 0.99],
            seed: 1,
            runs: 20,
            limit_ms: 20_000_000,
            leak_probability: LEAK_PROBABILITY,
            latency: LatencySource::Synthetic,
        }
    }
}

impl SybilConfig {
    pub fn from_kv(kv: &mut KvConfig) -> Result<Self, ConfigError> {
        let d = SybilConfig::default();
        let c = SybilConfig {
            population: kv.take_or("population", d.population)?,
            fractions: kv.take_list("fractions", d.fractions)?,
            seed: kv.take_or("seed", d.seed)?,
            runs: kv.take_or("runs", d.runs)?,
            limit_ms: kv.take_or("limit_ms", d.limit_ms)?,
            leak_probability: kv.take_or("leak_probability", d.leak_probability)?,
            latency: kv.take_or("latency", d.latency)?,
        };
        if let Some(f) = c.fractions.iter().find(|f| !(0.0..=0.99).contains(*f)) {
            return Err(ConfigError::Value { key: "fractions".into(), message: format!("{f} outside [0, 0.99]") });
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SybilRow {
    pub fraction: f64,
    pub sybils: usize,
    pub seed: u64,
    /// Empty if no honest circuit appeared before the limit.
    pub discovery_ms: Option<Millis>,
    pub honest_verified: usize,
    pub suspected: usize,
    pub datagrams: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FractionSummary {
    pub fraction: f64,
    pub discovered_runs: usize,
    pub runs: usize,
    pub discovery_ms: Summary,
}

#[derive(Debug, Clone, Serialize)]
pub struct SybilReport {
    pub rows: Vec<SybilRow>,
    pub by_fraction: Vec<FractionSummary>,
}

impl SybilReport {
    pub fn outcome(&self) -> Outcome {
        Outcome { csv: csv_bytes(&self.rows), summary: serde_json::json!({ "by_fraction": self.by_fraction }) }
    }
}

const TRACKER: usize = 0;
const SUBJECT: usize = 1;
const FIRST_MEMBER: usize = 2;

/// One run. Sybil sets are nested across fractions for a given seed.
pub fn run_once(c: &SybilConfig, fraction: f64, seed: u64) -> Result<SybilRow, String> {
    let mut net = SimNetwork::new(c.latency.build(seed)?, seed);
    let sybils = (fraction * c.population as f64).round() as usize;
    let mut order: Vec<usize> = (0..c.population).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5b11));
    let mut is_sybil = vec![false; c.population];
    for &m in &order[..sybils] {
        is_sybil[m] = true;
    }

    let mut tracker = quiet_config();
    tracker.overlay.connection_cap = c.population + 10;
    let tracker_idx = net.add_node(tracker);
    debug_assert_eq!(tracker_idx, TRACKER);
    let tracker_key = net.node(TRACKER).public();

    let mut subject = ipv8_core::node::NodeConfig::default();
    subject.overlay.bootstrap = vec![TransportAddress::Sim(TRACKER as u64)];
    subject.anon.hop_count = 1;
    subject.anon.excluded_relays = vec![tracker_key];
    net.add_node(subject);

    let sybil_members: Vec<(PublicKey, u64)> = (0..c.population)
        .filter(|&m| is_sybil[m])
        .map(|m| (net.key_for(FIRST_MEMBER + m), (FIRST_MEMBER + m) as u64))
        .collect();
    let mut honest_keys = Vec::new();
    for m in 0..c.population {
        let idx = FIRST_MEMBER + m;
        if is_sybil[m] {
            let kp = generate_keypair(Some(actor_seed(seed, idx)));
            let actor = SybilActor::new(kp, idx as u64, sybil_members.clone(), seed ^ (idx as u64) << 20)
                .with_leak_probability(c.leak_probability);
            net.add_sybil(actor);
        } else {
            let mut h = quiet_config();
            h.overlay.bootstrap = vec![TransportAddress::Sim(TRACKER as u64)];
            let i = net.add_node(h);
            debug_assert_eq!(i, idx);
            net.link(TRACKER, idx);
            honest_keys.push(net.node(idx).public());
        }
    }
    for (key, idx) in &sybil_members {
        net.know(TRACKER, *key, *idx as usize);
    }

    let t0 = net.now();
    let sent0 = net.ledger().sent;
    let found = net.run_until_with(t0 + c.limit_ms, |net| {
        let events = std::mem::take(&mut net.events);
        events.iter().any(|(_, who, ev)| {
            let NodeEvent::Anon(AnonEvent::CircuitReady { circuit_id, .. }) = ev else { return false };
            *who == SUBJECT
                && net.node(SUBJECT).anon.circuit(*circuit_id).and_then(|c| c.exit()).is_some_and(|k| honest_keys.contains(k))
        })
    });

    let table = &net.node(SUBJECT).overlay.table;
    Ok(SybilRow {
        fraction,
        sybils,
        seed,
        discovery_ms: found.map(|t| t - t0),
        honest_verified: table.keys().filter(|k| honest_keys.contains(k)).count(),
        suspected: table.verified.values().filter(|p| p.suspected()).count(),
        datagrams: net.ledger().sent - sent0,
    })
}

pub fn run(c: &SybilConfig, progress: &mut dyn FnMut(&str)) -> Result<SybilReport, String> {
    let mut rows = Vec::new();
    let mut by_fraction = Vec::new();
    for &fraction in &c.fractions {
        let mut times = Vec::new();
        for seed in seed_list(c.seed, c.runs) {
            let row = run_once(c, fraction, seed)?;
            if let Some(t) = row.discovery_ms {
                times.push(t as f64);
            }
            rows.push(row);
        }
        let s = FractionSummary { fraction, discovered_runs: times.len(), runs: c.runs, discovery_ms: summarize(&times) };
        progress(&format!(
            "sybil fraction={fraction} discovered={}/{} median={:.0}ms",
            s.discovered_runs, s.runs, s.discovery_ms.median
        ));
        by_fraction.push(s);
    }
    Ok(SybilReport { rows, by_fraction })
}
