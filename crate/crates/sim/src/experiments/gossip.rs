//! Time for one gossiped item to reach 99% of the network.

use ipv8_core::node::NodeEvent;
use ipv8_core::overlay::OverlayEvent;
use ipv8_core::Millis;
use serde::Serialize;

use super::{link_random, quiet_config, seed_list, Outcome};
use crate::config::{ConfigError, KvConfig};
use crate::latency::LatencySource;
use crate::network::SimNetwork;
use crate::report::{csv_bytes, summarize, Summary};

#[derive(Debug, Clone)]
pub struct GossipConfig {
    pub nodes: usize,
    /// Neighbourhood sizes; also the forwarding fanout.
    pub sizes: Vec<usize>,
    pub seed: u64,
    pub runs: usize,
    pub threshold: f64,
    pub limit_ms: Millis,
    pub latency: LatencySource,
}

impl Default for GossipConfig {
    fn default() -> Self {
        GossipConfig {
            nodes: 1000,
            sizes: vec![5, 10, 20],
            seed: 1,
            runs: 10,
            threshold: 0.99,
            limit_ms: 600_000,
            latency: LatencySource::Synthetic,
        }
    }
}

impl GossipConfig {
    pub fn from_kv(kv: &mut KvConfig) -> Result<Self, ConfigError> {
        let d = GossipConfig::default();
        Ok(GossipConfig {
            nodes: kv.take_or("nodes", d.nodes)?,
            sizes: kv.take_list("sizes", d.sizes)?,
            seed: kv.take_or("seed", d.seed)?,
            runs: kv.take_or("runs", d.runs)?,
            threshold: kv.take_or("threshold", d.threshold)?,
            limit_ms: kv.take_or("limit_ms", d.limit_ms)?,
            latency: kv.take_or("latency", d.latency)?,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GossipRow {
    pub nodes: usize,
    pub size: usize,
    pub seed: u64,
    /// Empty when the threshold was not reached.
    pub convergence_ms: Option<Millis>,
    pub reached: usize,
    pub datagrams: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SizeSummary {
    pub size: usize,
    pub converged_runs: usize,
    pub convergence_ms: Summary,
}

#[derive(Debug, Clone, Serialize)]
pub struct GossipReport {
    pub rows: Vec<GossipRow>,
    pub by_size: Vec<SizeSummary>,
}

impl GossipReport {
    pub fn median_for(&self, size: usize) -> Option<f64> {
        self.by_size.iter().find(|s| s.size == size).map(|s| s.convergence_ms.median)
    }

    pub fn outcome(&self) -> Outcome {
        Outcome { csv: csv_bytes(&self.rows), summary: serde_json::json!({ "by_size": self.by_size }) }
    }
}

/// One dissemination from node 0.
pub fn run_once(c: &GossipConfig, size: usize, seed: u64) -> Result<GossipRow, String> {
    use rand::SeedableRng;
    let mut net = SimNetwork::new(c.latency.build(seed)?, seed);
    let mut config = quiet_config();
    config.overlay.gossip_fanout = size;
    config.overlay.connection_cap = config.overlay.connection_cap.max(2 * size);
    let ids: Vec<usize> = (0..c.nodes).map(|_| net.add_node(config.clone())).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x6055);
    link_random(&mut net, &ids, size.div_ceil(2), &mut rng);

    let target = ((c.threshold * c.nodes as f64).ceil() as usize).max(1);
    let t0 = net.now();
    let sent0 = net.ledger().sent;
    let id = net.with_node(0, |n, now| n.gossip(now, b"probe".to_vec()));
    net.events.clear();
    let mut reached = 1;
    let done = net.run_until_with(t0 + c.limit_ms, |net| {
        for (_, _, ev) in net.events.drain(..) {
            if let NodeEvent::Overlay(OverlayEvent::Gossip(item)) = ev {
                if item.item_id == id {
                    reached += 1;
                }
            }
        }
        reached >= target
    });
    Ok(GossipRow {
        nodes: c.nodes,
        size,
        seed,
        convergence_ms: done.map(|t| t - t0),
        reached,
        datagrams: net.ledger().sent - sent0,
    })
}

pub fn run(c: &GossipConfig, progress: &mut dyn FnMut(&str)) -> Result<GossipReport, String> {
    let mut rows = Vec::new();
    let mut by_size = Vec::new();
    for &size in &c.sizes {
        let mut times = Vec::new();
        for seed in seed_list(c.seed, c.runs) {
            let row = run_once(c, size, seed)?;
            if let Some(t) = row.convergence_ms {
                times.push(t as f64);
            }
            rows.push(row);
        }
        let s = SizeSummary { size, converged_runs: times.len(), convergence_ms: summarize(&times) };
        progress(&format!("gossip n={} size={} converged={}/{} median={:.0}ms", c.nodes, size, s.converged_runs, c.runs, s.convergence_ms.median));
        by_size.push(s);
    }
    Ok(GossipReport { rows, by_size })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_nodes_take_one_link_latency() {
        let c = GossipConfig { nodes: 2, latency: LatencySource::Constant(37), ..Default::default() };
        let row = run_once(&c, 1, 4).unwrap();
        assert_eq!(row.convergence_ms, Some(37));
        assert_eq!(row.reached, 2);
    }
}
