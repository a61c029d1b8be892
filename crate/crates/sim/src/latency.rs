//! Link latency sources: a synthetic lognormal matrix and a file loader.

use std::path::Path;

use ipv8_core::wire::LatencyModel;
use ipv8_core::{sha256, Millis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

/// One-way median of the synthetic matrix.
pub const SYNTHETIC_MEDIAN_MS: f64 = 60.0;
/// Log-space spread of the synthetic matrix.
pub const SYNTHETIC_SIGMA: f64 = 0.6;

/// Symmetric lognormal latencies, a pure function of (seed, pair). Nothing
/// is stored, so the matrix costs no memory at any size.
#[derive(Debug, Clone)]
pub struct SyntheticLatency {
    seed: u64,
    dist: LogNormal<f64>,
}

impl SyntheticLatency {
    pub fn new(seed: u64) -> Self {
        Self::with_params(seed, SYNTHETIC_MEDIAN_MS, SYNTHETIC_SIGMA)
    }

    pub fn with_params(seed: u64, median_ms: f64, sigma: f64) -> Self {
        SyntheticLatency { seed, dist: LogNormal::new(median_ms.ln(), sigma).expect("sigma is finite and positive") }
    }
}

impl LatencyModel for SyntheticLatency {
    fn one_way_ms(&self, from: u64, to: u64) -> Millis {
        if from == to {
            return 0;
        }
        let (lo, hi) = (from.min(to), from.max(to));
        let mut key = [0u8; 24];
        key[..8].copy_from_slice(&self.seed.to_be_bytes());
        key[8..16].copy_from_slice(&lo.to_be_bytes());
        key[16..].copy_from_slice(&hi.to_be_bytes());
        let mut rng = ChaCha8Rng::from_seed(sha256(&key));
        (self.dist.sample(&mut rng).round() as Millis).max(1)
    }
}

/// A square matrix of one-way latencies in ms. Node indices wrap around.
#[derive(Debug, Clone)]
pub struct MatrixLatency {
    rows: Vec<Vec<Millis>>,
}

impl MatrixLatency {
    pub fn new(rows: Vec<Vec<Millis>>) -> Result<Self, String> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(format!("latency matrix must be square and non-empty ({n} rows)"));
        }
        Ok(MatrixLatency { rows })
    }

    /// Whitespace- or comma-separated rows; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, String> {
        let rows = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|t| !t.is_empty())
                    .map(|t| t.parse::<f64>().map(|v| v.round().max(0.0) as Millis).map_err(|e| format!("{t:?}: {e}")))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(rows)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl LatencyModel for MatrixLatency {
    fn one_way_ms(&self, from: u64, to: u64) -> Millis {
        let n = self.rows.len() as u64;
        self.rows[(from % n) as usize][(to % n) as usize]
    }
}

/// Where an experiment takes its latencies from.
#[derive(Debug, Clone, PartialEq)]
pub enum LatencySource {
    Synthetic,
    Constant(Millis),
    Matrix(std::path::PathBuf),
}

impl LatencySource {
    pub fn build(&self, seed: u64) -> Result<Box<dyn LatencyModel>, String> {
        Ok(match self {
            LatencySource::Synthetic => Box::new(SyntheticLatency::new(seed)),
            LatencySource::Constant(ms) => Box::new(ipv8_core::wire::ConstantLatency(*ms)),
            LatencySource::Matrix(p) => Box::new(MatrixLatency::load(p)?),
        })
    }
}

impl std::str::FromStr for LatencySource {
    type Err = String;

    /// `synthetic`, `constant:<ms>` or `matrix:<path>`.
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "synthetic" {
            return Ok(LatencySource::Synthetic);
        }
        if let Some(ms) = s.strip_prefix("constant:") {
            return ms.parse().map(LatencySource::Constant).map_err(|e| format!("bad latency {ms:?}: {e}"));
        }
        if let Some(p) = s.strip_prefix("matrix:") {
            return Ok(LatencySource::Matrix(p.into()));
        }
        Err(format!("unknown latency source {s:?}"))
    }
}
