//! Deterministic network simulator and the experiment harness.

pub mod config;
pub mod experiments;
pub mod latency;
pub mod network;
pub mod report;
pub mod sybil;

pub use config::{ConfigError, KvConfig};
pub use latency::{LatencySource, MatrixLatency, SyntheticLatency};
pub use network::{Actor, Captured, SimNetwork};
pub use sybil::SybilActor;
