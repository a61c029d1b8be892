//! Node settings: a `key = value` file, then command-line overrides.

use std::net::{Ipv4Addr, SocketAddrV4};
use std::path::{Path, PathBuf};

use ipv8_core::wire::TransportAddress;
use ipv8_sim::KvConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub key: Option<PathBuf>,
    pub bootstrap: Vec<TransportAddress>,
    pub hop_count: usize,
    pub covert_required: bool,
    pub experiment_config: Option<PathBuf>,
    pub bind: SocketAddrV4,
    /// Serve revocation register queries.
    pub register: bool,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            key: None,
            bootstrap: Vec::new(),
            hop_count: 2,
            covert_required: true,
            experiment_config: None,
            bind: SocketAddrV4::new(Ipv4Addr::UNSPECIFIED, 0),
            register: false,
        }
    }
}

impl CliConfig {
    /// Consumes known keys and fails on anything left over.
    pub fn from_kv(mut kv: KvConfig) -> Result<Self, CliError> {
        let d = CliConfig::default();
        let c = CliConfig {
            key: kv.take::<String>("key")?.map(PathBuf::from),
            bootstrap: kv.take_list("bootstrap", d.bootstrap)?,
            hop_count: kv.take_or("hop_count", d.hop_count)?,
            covert_required: kv.take_or("covert_required", d.covert_required)?,
            experiment_config: kv.take::<String>("experiment_config")?.map(PathBuf::from),
            bind: kv.take_or("bind", d.bind)?,
            register: kv.take_or("register", d.register)?,
        };
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::from_kv(KvConfig::load(p)?),
            None => Ok(CliConfig::default()),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(1..=3).contains(&self.hop_count) {
            return Err(CliError::Config(format!("hop_count must be 1-3, got {}", self.hop_count)));
        }
        Ok(())
    }
}
