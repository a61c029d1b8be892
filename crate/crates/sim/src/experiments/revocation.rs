//! How fast a revocation becomes visible under each of the three modes.

use std::collections::BTreeMap;

use ipv8_core::dpki::generate_keypair;
use ipv8_core::ssi::{attest, AttributeOptions, Pseudonym};
use ipv8_core::store::{check_revocation_local, RevocationMode, RevocationSet, RevocationStatus};
use ipv8_core::wire::TransportAddress;
use ipv8_core::Millis;
use rand::SeedableRng;
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};
use serde::Serialize;

use super::{link_random, quiet_config, seed_list, Outcome};
use crate::config::{ConfigError, KvConfig};
use crate::latency::LatencySource;
use crate::network::{actor_seed, SimNetwork};
use crate::report::{csv_bytes, summarize, Summary};

#[derive(Debug, Clone)]
pub struct RevocationConfig {
    pub nodes: usize,
    pub size: usize,
    pub seed: u64,
    pub runs: usize,
    /// Share of nodes that must hold a shared-log entry for it to count as visible.
    pub threshold: f64,
    pub limit_ms: Millis,
    pub latency: LatencySource,
}

impl Default for RevocationConfig {
    fn default() -> Self {
        RevocationConfig {
            nodes: 100,
            size: 20,
            seed: 1,
            runs: 10,
            threshold: 0.99,
            limit_ms: 600_000,
            latency: LatencySource::Synthetic,
        }
    }
}

impl RevocationConfig {
    pub fn from_kv(kv: &mut KvConfig) -> Result<Self, ConfigError> {
        let d = RevocationConfig::default();
        let c = RevocationConfig {
            nodes: kv.take_or("nodes", d.nodes)?,
            size: kv.take_or("size", d.size)?,
            seed: kv.take_or("seed", d.seed)?,
            runs: kv.take_or("runs", d.runs)?,
            threshold: kv.take_or("threshold", d.threshold)?,
            limit_ms: kv.take_or("limit_ms", d.limit_ms)?,
            latency: kv.take_or("latency", d.latency)?,
        };
        if c.nodes < 3 {
            return Err(ConfigError::Value { key: "nodes".into(), message: "need at least 3 nodes".into() });
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RevocationRow {
    pub seed: u64,
    pub mode: String,
    /// Empty when never visible within the limit.
    pub visible_ms: Option<Millis>,
    /// Shared log only: time until every node holds the entry.
    pub all_nodes_ms: Option<Millis>,
    pub datagrams: u64,
    /// Validity only: status at the last valid instant and one ms later.
    pub valid_at_boundary: Option<bool>,
    pub expired_after_boundary: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeSummary {
    pub mode: String,
    pub visible_runs: usize,
    pub visible_ms: Summary,
    pub datagrams: Summary,
}

#[derive(Debug, Clone, Serialize)]
pub struct RevocationReport {
    pub rows: Vec<RevocationRow>,
    pub by_mode: Vec<ModeSummary>,
}

impl RevocationReport {
    pub fn outcome(&self) -> Outcome {
        Outcome { csv: csv_bytes(&self.rows), summary: serde_json::json!({ "by_mode": self.by_mode }) }
    }

    pub fn summary(&self, mode: RevocationMode) -> Option<&ModeSummary> {
        let name = mode.to_string();
        self.by_mode.iter().find(|m| m.mode == name)
    }

    /// Every validity row expired exactly one ms after its last valid instant,
    /// with no datagrams.
    pub fn validity_exact(&self) -> bool {
        let rows: Vec<&RevocationRow> = self.rows.iter().filter(|r| r.mode == RevocationMode::Validity.to_string()).collect();
        !rows.is_empty()
            && rows
                .iter()
                .all(|r| r.valid_at_boundary == Some(true) && r.expired_after_boundary == Some(true) && r.datagrams == 0)
    }
}

/// The attester runs its own register, as a signing authority would.
const REGISTER: usize = 2;
const ATTESTER: usize = 2;

struct Setup {
    net: SimNetwork,
    attester: Pseudonym,
    attestation: ipv8_core::ssi::Attestation,
    metadata: ipv8_core::ssi::Metadata,
}

fn setup(c: &RevocationConfig, seed: u64, valid_until: Option<Millis>) -> Result<Setup, String> {
    let mut net = SimNetwork::new(c.latency.build(seed)?, seed);
    let mut config = quiet_config();
    config.overlay.gossip_fanout = c.size;
    config.overlay.connection_cap = config.overlay.connection_cap.max(2 * c.size);
    let ids: Vec<usize> = (0..c.nodes)
        .map(|i| {
            let mut cfg = config.clone();
            cfg.register_role = i == REGISTER;
            net.add_node(cfg)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e70);
    link_random(&mut net, &ids, c.size.div_ceil(2), &mut rng);

    // Node 2 attests the attribute and keeps the register.
    let mut subject = Pseudonym::from_keypair(generate_keypair(Some(actor_seed(seed, 2_000_000))));
    let attester = Pseudonym::from_keypair(generate_keypair(Some(actor_seed(seed, 2_000_001))));
    let options = AttributeOptions { valid_until, ..Default::default() };
    let mut crng = ChaCha20Rng::seed_from_u64(seed ^ 0xa77);
    let (_, metadata) = subject.add_attribute("age", ipv8_core::zkp::ALG_RANGE, "1", 30, options, &mut crng).map_err(|e| e.to_string())?;
    let attestation = attest(&attester, &metadata);
    net.events.clear();
    Ok(Setup { net, attester, attestation, metadata })
}

fn run_register(c: &RevocationConfig, seed: u64) -> Result<RevocationRow, String> {
    let mut s = setup(c, seed, None)?;
    let (t0, sent0) = (s.net.now(), s.net.ledger().sent);
    let (h, k) = (s.attestation.metadata_hash, s.attestation.attester_key);
    let reg = TransportAddress::Sim(REGISTER as u64);
    let kp = s.attester.keypair().clone();
    let att = s.attestation;
    s.net
        .with_node(ATTESTER, |n, now| n.revoke(now, &kp, &att, RevocationMode::Register, Some(&reg)))
        .map_err(|e| e.to_string())?;
    let seen = s.net.run_until_with(t0 + c.limit_ms, |net| {
        net.events.clear();
        net.node(REGISTER).ssi.register.as_ref().is_some_and(|r: &RevocationSet| r.is_revoked(&h, &k))
    });
    Ok(RevocationRow {
        seed,
        mode: RevocationMode::Register.to_string(),
        visible_ms: seen.map(|t| t - t0),
        all_nodes_ms: None,
        datagrams: s.net.ledger().sent - sent0,
        valid_at_boundary: None,
        expired_after_boundary: None,
    })
}

fn run_shared_log(c: &RevocationConfig, seed: u64) -> Result<RevocationRow, String> {
    let mut s = setup(c, seed, None)?;
    let (t0, sent0) = (s.net.now(), s.net.ledger().sent);
    let (h, k) = (s.attestation.metadata_hash, s.attestation.attester_key);
    let kp = s.attester.keypair().clone();
    let att = s.attestation;
    s.net
        .with_node(ATTESTER, |n, now| n.revoke(now, &kp, &att, RevocationMode::SharedLog, None))
        .map_err(|e| e.to_string())?;
    let target = ((c.threshold * c.nodes as f64).ceil() as usize).clamp(1, c.nodes);
    let mut holders = 0;
    let mut visible = None;
    let all = s.net.run_until_with(t0 + c.limit_ms, |net| {
        for (at, _, ev) in net.events.drain(..) {
            if let ipv8_core::node::NodeEvent::RevocationSeen { metadata_hash, attester, .. } = ev {
                if metadata_hash == h && attester == k {
                    holders += 1;
                    if holders >= target && visible.is_none() {
                        visible = Some(at);
                    }
                }
            }
        }
        holders >= c.nodes
    });
    Ok(RevocationRow {
        seed,
        mode: RevocationMode::SharedLog.to_string(),
        visible_ms: visible.map(|t| t - t0),
        all_nodes_ms: all.map(|t| t - t0),
        datagrams: s.net.ledger().sent - sent0,
        valid_at_boundary: None,
        expired_after_boundary: None,
    })
}

fn run_validity(c: &RevocationConfig, seed: u64) -> Result<RevocationRow, String> {
    let until: Millis = 5_000 + seed % 1000;
    let mut s = setup(c, seed, Some(until))?;
    let sent0 = s.net.ledger().sent;
    let kp = s.attester.keypair().clone();
    let att = s.attestation;
    s.net
        .with_node(ATTESTER, |n, now| n.revoke(now, &kp, &att, RevocationMode::Validity, None))
        .map_err(|e| e.to_string())?;
    let empty = RevocationSet::default();
    let status = |now| check_revocation_local(&s.attestation, &s.metadata, RevocationMode::Validity, &empty, now);
    let at_boundary = status(until);
    let after = status(until + 1);
    s.net.run_until(until + 1);
    Ok(RevocationRow {
        seed,
        mode: RevocationMode::Validity.to_string(),
        visible_ms: Some(until + 1),
        all_nodes_ms: None,
        datagrams: s.net.ledger().sent - sent0,
        valid_at_boundary: Some(at_boundary == RevocationStatus::Valid),
        expired_after_boundary: Some(after == RevocationStatus::Expired),
    })
}

pub fn run(c: &RevocationConfig, progress: &mut dyn FnMut(&str)) -> Result<RevocationReport, String> {
    let mut rows = Vec::new();
    for seed in seed_list(c.seed, c.runs) {
        rows.push(run_register(c, seed)?);
        rows.push(run_shared_log(c, seed)?);
        rows.push(run_validity(c, seed)?);
    }
    let mut groups: BTreeMap<String, Vec<&RevocationRow>> = BTreeMap::new();
    for r in &rows {
        groups.entry(r.mode.clone()).or_default().push(r);
    }
    let by_mode: Vec<ModeSummary> = groups
        .into_iter()
        .map(|(mode, rs)| {
            let vis: Vec<f64> = rs.iter().filter_map(|r| r.visible_ms).map(|t| t as f64).collect();
            let dg: Vec<f64> = rs.iter().map(|r| r.datagrams as f64).collect();
            ModeSummary { mode, visible_runs: vis.len(), visible_ms: summarize(&vis), datagrams: summarize(&dg) }
        })
        .collect();
    for m in &by_mode {
        progress(&format!("revocation mode={} visible={}/{} median={:.0}ms", m.mode, m.visible_runs, c.runs, m.visible_ms.median));
    }
    Ok(RevocationReport { rows, by_mode })
}
