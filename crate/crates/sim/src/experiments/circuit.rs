//! Circuit creation time per hop count, next to a direct verification baseline.

use ipv8_core::anon::{select_relays, AnonEvent, Purpose};
use ipv8_core::node::NodeEvent;
use ipv8_core::ssi::Triple;
use ipv8_core::zkp::ALG_RANGE;
use ipv8_core::Millis;
use serde::Serialize;

use super::world::{wait_for, Mode, World, WorldParams, STEP_LIMIT_MS};
use super::Outcome;
use crate::config::{ConfigError, KvConfig};
use crate::latency::LatencySource;
use crate::report::{csv_bytes, median, summarize, Summary};

#[derive(Debug, Clone)]
pub struct CircuitConfig {
    pub nodes: usize,
    pub hops: Vec<usize>,
    pub trials: usize,
    pub baseline_trials: usize,
    pub seed: u64,
    pub warmup_ms: Millis,
    pub latency: LatencySource,
}

impl Default for CircuitConfig {
    fn default() -> Self {
        CircuitConfig {
            nodes: 40,
            hops: vec![1, 2, 3],
            trials: 200,
            baseline_trials: 20,
            seed: 1,
            warmup_ms: 30_000,
            latency: LatencySource::Synthetic,
        }
    }
}

impl CircuitConfig {
    pub fn from_kv(kv: &mut KvConfig) -> Result<Self, ConfigError> {
        let d = CircuitConfig::default();
        let c = CircuitConfig {
            nodes: kv.take_or("nodes", d.nodes)?,
            hops: kv.take_list("hops", d.hops)?,
            trials: kv.take_or("trials", d.trials)?,
            baseline_trials: kv.take_or("baseline_trials", d.baseline_trials)?,
            seed: kv.take_or("seed", d.seed)?,
            warmup_ms: kv.take_or("warmup_ms", d.warmup_ms)?,
            latency: kv.take_or("latency", d.latency)?,
        };
        if let Some(h) = c.hops.iter().find(|h| !(1..=3).contains(*h)) {
            return Err(ConfigError::Value { key: "hops".into(), message: format!("{h} outside 1..=3") });
        }
        if c.nodes < 10 {
            return Err(ConfigError::Value { key: "nodes".into(), message: "need at least 10 nodes".into() });
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CircuitRow {
    pub hops: usize,
    pub trial: usize,
    pub origin: usize,
    /// Empty when the build failed or timed out.
    pub latency_ms: Option<Millis>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HopSummary {
    pub hops: usize,
    pub built: usize,
    pub latency_ms: Summary,
}

#[derive(Debug, Clone, Serialize)]
pub struct CircuitReport {
    pub rows: Vec<CircuitRow>,
    pub by_hops: Vec<HopSummary>,
    pub median_link_ms: f64,
    /// Direct B.1 + B.2 with a range proof.
    pub baseline_verify_ms: f64,
    /// Median creation time over the baseline, per hop count.
    pub ratio_to_baseline: Vec<(usize, f64)>,
}

impl CircuitReport {
    pub fn median_for(&self, hops: usize) -> Option<f64> {
        self.by_hops.iter().find(|h| h.hops == hops).map(|h| h.latency_ms.median)
    }

    pub fn outcome(&self) -> Outcome {
        Outcome {
            csv: csv_bytes(&self.rows),
            summary: serde_json::json!({
                "by_hops": self.by_hops,
                "median_link_ms": self.median_link_ms,
                "baseline_verify_ms": self.baseline_verify_ms,
                "ratio_to_baseline": self.ratio_to_baseline,
            }),
        }
    }
}

fn build_one(w: &mut World, origin: usize, hops: usize) -> Option<Millis> {
    let cid = w.net.with_node(origin, |n, now| {
        let me = n.public();
        n.with_anon(now, |a, table, rng| {
            let path = select_relays(hops, table, &[me], rng).ok()?;
            a.build_circuit(now, path, Purpose::Manual, rng).ok()
        })
    })?;
    let limit = w.net.now() + STEP_LIMIT_MS;
    let got = wait_for(&mut w.net, origin, limit, |ev| match ev {
        NodeEvent::Anon(AnonEvent::CircuitReady { circuit_id, latency_ms, .. }) if *circuit_id == cid => Some(Some(*latency_ms)),
        NodeEvent::Anon(AnonEvent::CircuitClosed { circuit_id, .. }) if *circuit_id == cid => Some(None),
        _ => None,
    });
    w.net.with_node(origin, |n, now| n.with_anon(now, |a, _, _| a.close_circuit(cid)));
    got.flatten()
}

pub fn run(c: &CircuitConfig, progress: &mut dyn FnMut(&str)) -> Result<CircuitReport, String> {
    let params = WorldParams {
        nodes: c.nodes,
        seed: c.seed,
        latency: c.latency.clone(),
        warmup_ms: c.warmup_ms,
        pool: false,
        ..Default::default()
    };
    let mut w = World::build(&params)?;

    let mut links = Vec::new();
    for i in 0..c.nodes as u64 {
        for j in i + 1..c.nodes as u64 {
            links.push(w.net.fabric.latency(i, j) as f64);
        }
    }
    let median_link_ms = median(&links);

    let mut rows = Vec::new();
    let mut by_hops = Vec::new();
    for &hops in &c.hops {
        let mut times = Vec::new();
        for trial in 0..c.trials {
            let origin = trial % c.nodes;
            let latency_ms = build_one(&mut w, origin, hops);
            if let Some(t) = latency_ms {
                times.push(t as f64);
            }
            rows.push(CircuitRow { hops, trial, origin, latency_ms });
        }
        let s = HopSummary { hops, built: times.len(), latency_ms: summarize(&times) };
        progress(&format!("circuit hops={hops} built={}/{} median={:.0}ms", s.built, c.trials, s.latency_ms.median));
        by_hops.push(s);
    }

    let attr = w.add_attribute("age", ALG_RANGE, "1", 25)?;
    w.attest(Mode::Direct, &attr)?;
    let mut base = Vec::new();
    for k in 0..c.baseline_trials.max(1) {
        // Rotate the verifier so the baseline is not one link pair.
        w.verifier = 2 + k % (c.nodes - 2);
        let (setup, exchange, outcome) = w.verify(Mode::Direct, Triple::new("age", ALG_RANGE, "1"), Some((18, 130)), 0)?;
        if !outcome.accepted {
            return Err("baseline verification rejected".into());
        }
        base.push((setup.ms + exchange.ms) as f64);
    }
    let baseline_verify_ms = median(&base);
    let ratio_to_baseline = by_hops.iter().map(|h| (h.hops, h.latency_ms.median / baseline_verify_ms)).collect();
    progress(&format!("circuit median link={median_link_ms:.0}ms baseline verification={baseline_verify_ms:.0}ms"));
    Ok(CircuitReport { rows, by_hops, median_link_ms, baseline_verify_ms, ratio_to_baseline })
}
