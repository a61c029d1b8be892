//! Enrollment (A.1 + A.2) and verification (B.1 + B.2) latency and traffic,
//! over direct envelopes and over covert channels.

use std::collections::BTreeMap;

use ipv8_core::ssi::Triple;
use ipv8_core::zkp::{ALG_RANGE, ALG_SIGMA};
use ipv8_core::Millis;
use serde::Serialize;

use super::world::{Mode, World, WorldParams};
use super::{seed_list, Outcome};
use crate::config::{ConfigError, KvConfig};
use crate::latency::LatencySource;
use crate::report::{csv_bytes, median};

/// One proof algorithm setting. Parsed from `range` or `sigma:<rounds>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Algo {
    Range,
    Sigma(u32),
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Range => ALG_RANGE,
            Algo::Sigma(_) => ALG_SIGMA,
        }
    }

    pub fn rounds(self) -> u32 {
        match self {
            Algo::Range => 0,
            Algo::Sigma(r) => r,
        }
    }

    pub fn label(self) -> String {
        match self {
            Algo::Range => "range".into(),
            Algo::Sigma(r) => format!("sigma:{r}"),
        }
    }
}

impl std::str::FromStr for Algo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "range" {
            return Ok(Algo::Range);
        }
        match s.strip_prefix("sigma:").map(str::parse::<u32>) {
            Some(Ok(r)) if r > 0 => Ok(Algo::Sigma(r)),
            _ => Err(format!("expected `range` or `sigma:<rounds>`, got {s:?}")),
        }
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "direct" => Ok(Mode::Direct),
        "covert" => Ok(Mode::Covert),
        _ => Err(format!("unknown mode {s:?}")),
    }
}

#[derive(Debug, Clone)]
pub struct E2eConfig {
    pub nodes: usize,
    pub seed: u64,
    pub runs: usize,
    pub algorithms: Vec<Algo>,
    pub modes: Vec<Mode>,
    pub value: u64,
    pub range: (u64, u64),
    pub latency: LatencySource,
}

impl Default for E2eConfig {
    fn default() -> Self {
        E2eConfig {
            nodes: 50,
            seed: 1,
            runs: 1,
            algorithms: vec![Algo::Range, Algo::Sigma(1), Algo::Sigma(9), Algo::Sigma(18)],
            modes: vec![Mode::Direct, Mode::Covert],
            value: 25,
            range: (18, 130),
            latency: LatencySource::Synthetic,
        }
    }
}

impl E2eConfig {
    pub fn from_kv(kv: &mut KvConfig) -> Result<Self, ConfigError> {
        let d = E2eConfig::default();
        let modes: Vec<String> = kv.take_list("modes", vec!["direct".to_string(), "covert".to_string()])?;
        let modes = modes
            .iter()
            .map(|m| parse_mode(m))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|message| ConfigError::Value { key: "modes".into(), message })?;
        let c = E2eConfig {
            nodes: kv.take_or("nodes", d.nodes)?,
            seed: kv.take_or("seed", d.seed)?,
            runs: kv.take_or("runs", d.runs)?,
            algorithms: kv.take_list("algorithms", d.algorithms)?,
            modes,
            value: kv.take_or("value", d.value)?,
            range: (kv.take_or("range_min", d.range.0)?, kv.take_or("range_max", d.range.1)?),
            latency: kv.take_or("latency", d.latency)?,
        };
        if c.nodes < 10 {
            return Err(ConfigError::Value { key: "nodes".into(), message: "need at least 10 nodes".into() });
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct E2eRow {
    pub seed: u64,
    pub mode: &'static str,
    pub algorithm: String,
    pub rounds: u32,
    pub enroll_ms: Millis,
    pub enroll_channel_ms: Millis,
    pub enroll_bytes: u64,
    pub verify_ms: Millis,
    pub verify_channel_ms: Millis,
    pub verify_bytes: u64,
    /// Bytes of the identity exchange alone, without channel set-up.
    pub verify_exchange_bytes: u64,
    pub verify_datagrams: u64,
    pub accepted: bool,
    pub confidence: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupSummary {
    pub mode: &'static str,
    pub algorithm: String,
    pub median_enroll_ms: f64,
    pub median_verify_ms: f64,
    pub median_verify_channel_ms: f64,
    pub median_verify_bytes: f64,
    pub median_verify_exchange_bytes: f64,
    pub accepted_runs: usize,
    pub runs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct E2eReport {
    pub rows: Vec<E2eRow>,
    pub groups: Vec<GroupSummary>,
}

impl E2eReport {
    pub fn outcome(&self) -> Outcome {
        Outcome { csv: csv_bytes(&self.rows), summary: serde_json::json!({ "groups": self.groups }) }
    }

    pub fn group(&self, mode: Mode, algo: Algo) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.mode == mode.name() && g.algorithm == algo.label())
    }
}

/// Runs every (mode, algorithm) pair once on one network.
pub fn run_world(c: &E2eConfig, seed: u64) -> Result<Vec<E2eRow>, String> {
    let mut w = World::build(&WorldParams { nodes: c.nodes, seed, latency: c.latency.clone(), ..Default::default() })?;
    if c.modes.contains(&Mode::Covert) {
        w.publish_services()?;
    }
    let mut rows = Vec::new();
    for &mode in &c.modes {
        for (k, &algo) in c.algorithms.iter().enumerate() {
            let version = format!("{}.{k}", mode.name());
            let t0 = w.net.now();
            let b0 = w.net.ledger().bytes_sent;
            let attr = w.add_attribute("age", algo.name(), &version, c.value)?;
            let (enroll_setup, _) = w.attest(mode, &attr)?;
            let enroll_ms = w.net.now() - t0;
            let enroll_bytes = w.net.ledger().bytes_sent - b0;
            let range = (algo == Algo::Range).then_some(c.range);
            let triple = Triple::new("age", algo.name(), &version);
            let (setup, exchange, outcome) = w.verify(mode, triple, range, algo.rounds())?;
            rows.push(E2eRow {
                seed,
                mode: mode.name(),
                algorithm: algo.label(),
                rounds: algo.rounds(),
                enroll_ms,
                enroll_channel_ms: enroll_setup.ms,
                enroll_bytes,
                verify_ms: setup.ms + exchange.ms,
                verify_channel_ms: setup.ms,
                verify_bytes: setup.bytes + exchange.bytes,
                verify_exchange_bytes: exchange.bytes,
                verify_datagrams: setup.datagrams + exchange.datagrams,
                accepted: outcome.accepted,
                confidence: outcome.confidence,
            });
        }
    }
    if !w.net.ledger_balanced() {
        return Err("datagram ledger does not balance".into());
    }
    Ok(rows)
}

pub fn run(c: &E2eConfig, progress: &mut dyn FnMut(&str)) -> Result<E2eReport, String> {
    let mut rows = Vec::new();
    for seed in seed_list(c.seed, c.runs) {
        rows.extend(run_world(c, seed)?);
        progress(&format!("e2e seed={seed} done"));
    }
    let mut groups: BTreeMap<(&'static str, String), Vec<&E2eRow>> = BTreeMap::new();
    for r in &rows {
        groups.entry((r.mode, r.algorithm.clone())).or_default().push(r);
    }
    let groups = groups
        .into_iter()
        .map(|((mode, algorithm), rs)| {
            let m = |f: fn(&E2eRow) -> f64| median(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            GroupSummary {
                mode,
                algorithm,
                median_enroll_ms: m(|r| r.enroll_ms as f64),
                median_verify_ms: m(|r| r.verify_ms as f64),
                median_verify_channel_ms: m(|r| r.verify_channel_ms as f64),
                median_verify_bytes: m(|r| r.verify_bytes as f64),
                median_verify_exchange_bytes: m(|r| r.verify_exchange_bytes as f64),
                accepted_runs: rs.iter().filter(|r| r.accepted).count(),
                runs: rs.len(),
            }
        })
        .collect();
    Ok(E2eReport { rows, groups })
}

/// What a full traffic capture of one covert A.1 to B.2 run shows.
#[derive(Debug, Clone, Serialize)]
pub struct PrivacyReport {
    pub completed: bool,
    pub accepted: bool,
    pub bridges: usize,
    /// Bridges joining the attester's and the verifier's circuits.
    pub attester_verifier_bridges: usize,
    /// Datagrams sent straight between attester and verifier.
    pub attester_verifier_datagrams: usize,
    /// Nodes that saw both endpoint addresses of some channel.
    pub observers_of_both: Vec<usize>,
    pub disclosed_commitment_sent: bool,
    pub hidden_commitment_sent: bool,
    /// Either commitment in the clear anywhere in raw datagrams.
    pub commitment_in_clear: bool,
}

impl PrivacyReport {
    pub fn passed(&self) -> bool {
        self.completed
            && self.accepted
            && self.bridges >= 2
            && self.attester_verifier_bridges == 0
            && self.attester_verifier_datagrams == 0
            && self.observers_of_both.is_empty()
            && self.disclosed_commitment_sent
            && !self.hidden_commitment_sent
            && !self.commitment_in_clear
    }
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// The full flow over 2-hop covert channels with capture on.
pub fn privacy_run(nodes: usize, seed: u64, latency: LatencySource) -> Result<PrivacyReport, String> {
    let mut w = World::build(&WorldParams { nodes, seed, latency, hop_count: 2, apart: vec![(1, 2)], ..Default::default() })?;
    w.net.capture = Some(Vec::new());
    for i in 0..nodes {
        w.net.with_node(i, |n, _| n.ssi_capture = Some(Vec::new()));
    }
    w.publish_services()?;
    // Index 0 stays private; index 1 is the one the verifier asks about.
    w.add_attribute("nationality", ALG_SIGMA, "1", 31)?;
    let attr = w.add_attribute("age", ALG_RANGE, "1", 25)?;
    let result = w
        .attest(Mode::Covert, &attr)
        .and_then(|_| w.verify(Mode::Covert, Triple::new("age", ALG_RANGE, "1"), Some((18, 130)), 0));

    let sp = w.subject_pseudonym;
    let pseudonym = w.net.node(w.subject).ssi.pseudonym(&sp).ok_or("subject pseudonym")?;
    let hidden = pseudonym.commitment_at(0).ok_or("hidden commitment")?.to_bytes();
    let disclosed = pseudonym.commitment_at(1).ok_or("disclosed commitment")?.to_bytes();

    let (a, v) = (w.attester as u64, w.verifier as u64);
    let captured = w.net.capture.take().unwrap_or_default();
    let attester_verifier_datagrams = captured.iter().filter(|c| (c.from == a && c.to == v) || (c.from == v && c.to == a)).count();
    let commitment_in_clear = captured.iter().any(|c| contains(&c.bytes, &hidden) || contains(&c.bytes, &disclosed));

    let mut disclosed_commitment_sent = false;
    let mut hidden_commitment_sent = false;
    for (_, n) in w.net.nodes() {
        for p in n.ssi_capture.iter().flatten() {
            disclosed_commitment_sent |= contains(p, &disclosed);
            hidden_commitment_sent |= contains(p, &hidden);
        }
    }

    let pair = |p: &super::world::BridgedPath| {
        let (x, y) = p.endpoints();
        (x.min(y), x.max(y))
    };
    let av = (w.attester.min(w.verifier), w.attester.max(w.verifier));
    let mut observers: Vec<usize> = w.bridges.iter().flat_map(|b| b.observers_of_both()).collect();
    observers.sort();
    observers.dedup();
    Ok(PrivacyReport {
        completed: result.is_ok(),
        accepted: result.as_ref().is_ok_and(|(_, _, o)| o.accepted),
        bridges: w.bridges.len(),
        attester_verifier_bridges: w.bridges.iter().filter(|b| pair(b) == av).count(),
        attester_verifier_datagrams,
        observers_of_both: observers,
        disclosed_commitment_sent,
        hidden_commitment_sent,
        commitment_in_clear,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algo_parse() {
        assert_eq!("range".parse::<Algo>(), Ok(Algo::Range));
        assert_eq!("sigma:9".parse::<Algo>(), Ok(Algo::Sigma(9)));
        assert!("sigma:0".parse::<Algo>().is_err());
        assert!("bulletproof".parse::<Algo>().is_err());
    }
}
