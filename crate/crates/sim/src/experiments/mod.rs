//! The experiments. Each takes a flat config and yields CSV rows plus a JSON summary.

use std::path::Path;

use ipv8_core::node::NodeConfig;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::{ConfigError, KvConfig};
use crate::network::SimNetwork;

pub mod circuit;
pub mod e2e;
pub mod gossip;
pub mod revocation;
pub mod sybil;
pub mod world;

pub const NAMES: [&str; 5] = ["gossip", "sybil", "circuit", "e2e", "revocation"];

/// A node that neither walks, probes, pings for liveness nor keeps a circuit pool.
pub fn quiet_config() -> NodeConfig {
    let mut c = NodeConfig::default();
    c.overlay.walking = false;
    c.overlay.liveness = false;
    c.overlay.probe_interval_ms = 0;
    c.anon.pool_enabled = false;
    c
}

/// Links every node in `nodes` to `per_node` random others from the same set.
pub fn link_random<R: Rng>(net: &mut SimNetwork, nodes: &[usize], per_node: usize, rng: &mut R) {
    link_random_apart(net, nodes, per_node, &[], rng)
}

/// Same, but never links the pairs in `apart`.
pub fn link_random_apart<R: Rng>(net: &mut SimNetwork, nodes: &[usize], per_node: usize, apart: &[(usize, usize)], rng: &mut R) {
    let kept_apart = |a: usize, b: usize| apart.iter().any(|&(x, y)| (x, y) == (a, b) || (y, x) == (a, b));
    for &a in nodes {
        let mut others: Vec<usize> = nodes.iter().copied().filter(|&b| b != a && !kept_apart(a, b)).collect();
        others.shuffle(rng);
        let mut made = 0;
        for b in others {
            if made >= per_node {
                break;
            }
            if net.link(a, b) {
                made += 1;
            }
        }
    }
}

/// Seeds `base, base+1, ...`.
pub fn seed_list(base: u64, runs: usize) -> Vec<u64> {
    (0..runs as u64).map(|i| base.wrapping_add(i)).collect()
}

/// Output of one experiment.
pub struct Outcome {
    pub csv: Vec<u8>,
    pub summary: serde_json::Value,
}

impl Outcome {
    pub fn write(&self, dir: &Path, name: &str) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{name}.csv")), &self.csv)?;
        let json = serde_json::to_vec_pretty(&self.summary).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(format!("{name}.json")), json)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("unknown experiment {0:?}")]
    Unknown(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Setup(String),
}

/// Runs an experiment by name. `progress` gets one line per finished trial group.
pub fn run_named(name: &str, mut kv: KvConfig, progress: &mut dyn FnMut(&str)) -> Result<Outcome, ExperimentError> {
    let out = match name {
        "gossip" => {
            let c = gossip::GossipConfig::from_kv(&mut kv)?;
            kv.finish()?;
            gossip::run(&c, progress).map_err(ExperimentError::Setup)?.outcome()
        }
        "sybil" => {
            let c = sybil::SybilConfig::from_kv(&mut kv)?;
            kv.finish()?;
            sybil::run(&c, progress).map_err(ExperimentError::Setup)?.outcome()
        }
        "circuit" => {
            let c = circuit::CircuitConfig::from_kv(&mut kv)?;
            kv.finish()?;
            circuit::run(&c, progress).map_err(ExperimentError::Setup)?.outcome()
        }
        "e2e" => {
            let c = e2e::E2eConfig::from_kv(&mut kv)?;
            kv.finish()?;
            e2e::run(&c, progress).map_err(ExperimentError::Setup)?.outcome()
        }
        "revocation" => {
            let c = revocation::RevocationConfig::from_kv(&mut kv)?;
            kv.finish()?;
            revocation::run(&c, progress).map_err(ExperimentError::Setup)?.outcome()
        }
        other => return Err(ExperimentError::Unknown(other.to_string())),
    };
    Ok(out)
}
