//! The `ipv8` command line. Network commands talk to a running `node run`
//! over its control socket; file-level commands work without one.

pub mod config;
pub mod control;
pub mod daemon;
pub mod error;
pub mod output;
pub mod seed;
pub mod wallet;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use ipv8_core::dpki::KeyPair;
use ipv8_core::store::{revoke, verify_log_file, RevocationMode, StoreError};
use ipv8_core::wire::TransportAddress;
use ipv8_sim::experiments::run_named;
use ipv8_sim::KvConfig;
use serde_json::{json, Value};

use config::CliConfig;
use error::CliError;
use output::Out;
use wallet::AttrSpec;

/// Each command and the one module operation behind it.
pub const COMMANDS: &[(&str, &str)] = &[
    ("node run", "node::Node event loop"),
    ("id create", "ssi::Pseudonym::from_keypair"),
    ("id add-attr", "ssi::Pseudonym::add_attribute"),
    ("id attest", "ssi::IdentityService::request_attestation"),
    ("id request", "ssi::IdentityService::request_verification"),
    ("id allow", "ssi::IdentityService::allow"),
    ("id deny", "ssi::IdentityService::deny"),
    ("id status", "ssi::IdentityService::outstanding"),
    ("audit verify", "store::verify_log_file"),
    ("revoke", "store::revoke"),
    ("experiment", "sim::experiments::run_named"),
];

#[derive(Parser, Debug)]
#[command(name = "ipv8", version, about = "Identity middleware node and tools")]
pub struct Cli {
    /// Data directory: node key, pseudonyms, audit log, control socket.
    #[arg(long, global = true, default_value = "ipv8-data")]
    pub dir: PathBuf,
    /// Node key file (32-byte seed); created if missing.
    #[arg(long, global = true)]
    pub key: Option<PathBuf>,
    /// `key = value` node settings; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// One JSON object per output line.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a node.
    #[command(subcommand)]
    Node(NodeCmd),
    /// Pseudonyms, attributes and the two identity flows.
    #[command(subcommand)]
    Id(IdCmd),
    /// Audit log checks.
    #[command(subcommand)]
    Audit(AuditCmd),
    /// Withdraw an attestation this node issued.
    Revoke(RevokeArgs),
    /// Run a simulator experiment and write CSV and JSON results.
    Experiment(ExperimentArgs),
}

#[derive(Subcommand, Debug)]
pub enum NodeCmd {
    Run(NodeRunArgs),
}

#[derive(Args, Debug)]
pub struct NodeRunArgs {
    #[arg(long)]
    pub bind: Option<std::net::SocketAddrV4>,
    /// Comma-separated bootstrap addresses.
    #[arg(long, value_delimiter = ',')]
    pub bootstrap: Vec<TransportAddress>,
    #[arg(long)]
    pub hops: Option<usize>,
    /// Allow identity traffic over direct links (no onion routing).
    #[arg(long)]
    pub direct: bool,
    /// Answer revocation register queries.
    #[arg(long)]
    pub register: bool,
    /// Stop after this many seconds.
    #[arg(long)]
    pub duration: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum IdCmd {
    /// Make a new pseudonym.
    Create {
        #[arg(long, default_value = "default")]
        label: String,
    },
    /// Append an attribute to a pseudonym's chain.
    AddAttr(AddAttrArgs),
    /// Ask an attester to sign one of our attributes.
    Attest(AttestArgs),
    /// Ask a subject to prove an attribute.
    Request(RequestArgs),
    /// Approve a pending request.
    Allow { request_id: u64 },
    /// Refuse a pending request.
    Deny { request_id: u64 },
    /// Pseudonyms, pending requests and finished verifications.
    Status,
}

#[derive(Args, Debug)]
pub struct AddAttrArgs {
    #[arg(long, default_value = "default")]
    pub label: String,
    #[arg(long)]
    pub name: String,
    #[arg(long)]
    pub value: u64,
    #[arg(long)]
    pub algo: String,
    #[arg(long = "algo-version", default_value = "1")]
    pub version: String,
    /// Expiry, milliseconds since the Unix epoch.
    #[arg(long)]
    pub valid_until: Option<u64>,
    /// Revocation modes to declare: register, log, validity.
    #[arg(long, value_delimiter = ',')]
    pub revocation: Vec<RevocationMode>,
    /// Register address for the `register` mode.
    #[arg(long)]
    pub register: Option<TransportAddress>,
}

#[derive(Args, Debug)]
pub struct Peer {
    /// The other node's public key (hex).
    #[arg(long)]
    pub peer: String,
    /// Its UDP address, for direct links.
    #[arg(long)]
    pub address: Option<TransportAddress>,
}

#[derive(Args, Debug)]
pub struct AttestArgs {
    #[arg(long, default_value = "default")]
    pub label: String,
    /// Attribute name.
    #[arg(long)]
    pub name: String,
    /// The attester's pseudonym key (hex).
    #[arg(long)]
    pub attester: String,
    #[command(flatten)]
    pub peer: Peer,
}

#[derive(Args, Debug)]
pub struct RequestArgs {
    /// The subject's pseudonym key (hex).
    #[arg(long)]
    pub pseudonym: String,
    #[arg(long)]
    pub name: String,
    #[arg(long)]
    pub algo: String,
    #[arg(long = "algo-version", default_value = "1")]
    pub version: String,
    /// Inclusive bounds `LO,HI` for range proofs.
    #[arg(long, value_parser = parse_range)]
    pub range: Option<(u64, u64)>,
    /// Interactive rounds for sigma proofs.
    #[arg(long, default_value_t = 0)]
    pub rounds: u32,
    /// Block until the outcome is known, up to this many seconds.
    #[arg(long)]
    pub wait: Option<u64>,
    #[command(flatten)]
    pub peer: Peer,
}

#[derive(Subcommand, Debug)]
pub enum AuditCmd {
    /// Check every record, the hash chain and the signed head.
    Verify {
        file: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct RevokeArgs {
    /// The attesting pseudonym.
    #[arg(long, default_value = "default")]
    pub label: String,
    /// Metadata hash of the attested attribute (hex).
    #[arg(long)]
    pub metadata: String,
    #[arg(long, default_value = "log")]
    pub mode: RevocationMode,
    #[arg(long)]
    pub register: Option<TransportAddress>,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    /// gossip, sybil, circuit, e2e or revocation.
    pub name: String,
    /// `key = value` experiment settings; defaults to `experiment_config` from `--config`.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Sybil fractions, comma separated.
    #[arg(long)]
    pub fractions: Option<String>,
    /// Any other setting as `key=value`; repeatable.
    #[arg(long = "set")]
    pub set: Vec<String>,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
}

fn parse_range(s: &str) -> Result<(u64, u64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo: u64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: u64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    if lo > hi {
        return Err(format!("empty range {lo},{hi}"));
    }
    Ok((lo, hi))
}

/// Runs one parsed command and returns the exit status.
pub fn run(cli: Cli) -> i32 {
    let out = Out { json: cli.json };
    match dispatch(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            out.error(&e);
            e.code()
        }
    }
}

/// The settings file, with `--key` taking precedence.
fn base_config(cli: &Cli) -> Result<CliConfig, CliError> {
    let mut cfg = CliConfig::load(cli.config.as_deref())?;
    if cli.key.is_some() {
        cfg.key = cli.key.clone();
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli, out: Out) -> Result<(), CliError> {
    let dir = cli.dir.as_path();
    match &cli.command {
        Command::Node(NodeCmd::Run(a)) => {
            let mut cfg = base_config(cli)?;
            if let Some(b) = a.bind {
                cfg.bind = b;
            }
            if !a.bootstrap.is_empty() {
                cfg.bootstrap = a.bootstrap.clone();
            }
            if let Some(h) = a.hops {
                cfg.hop_count = h;
            }
            cfg.covert_required &= !a.direct;
            cfg.register |= a.register;
            daemon::run(dir, cfg, a.duration.map(Duration::from_secs), out)
        }
        Command::Id(cmd) => id(dir, cmd, out),
        Command::Audit(AuditCmd::Verify { file }) => audit_verify(dir, &base_config(cli)?, file, out),
        Command::Revoke(a) => revoke_cmd(dir, a, out),
        Command::Experiment(a) => {
            let params = a.params.clone().or(base_config(cli)?.experiment_config);
            experiment(a, params.as_deref(), out)
        }
    }
}

fn id(dir: &Path, cmd: &IdCmd, out: Out) -> Result<(), CliError> {
    match cmd {
        IdCmd::Create { label } => {
            wallet::check_label(label)?;
            let v = match control::try_call(dir, json!({"op": "create", "label": label})) {
                Some(r) => r?,
                None => {
                    let (_, p) = wallet::create(dir, label)?;
                    wallet::describe(label, &p)
                }
            };
            out.emit(v, |v| format!("created pseudonym {} ({})", v["label"], v["key"]));
        }
        IdCmd::AddAttr(a) => {
            let spec = AttrSpec {
                name: a.name.clone(),
                algorithm: a.algo.clone(),
                version: a.version.clone(),
                value: a.value,
                valid_until: a.valid_until,
                revocation: a.revocation.clone(),
                register: a.register.as_ref().map(|r| r.to_string()),
            };
            let v = match control::try_call(dir, json!({"op": "add_attr", "label": a.label, "attr": spec.to_json()})) {
                Some(r) => r?,
                None => {
                    let (entry, mut p) = wallet::load(dir, &a.label)?;
                    let meta = wallet::add_attribute(&entry, &mut p, &spec)?;
                    json!({"label": a.label, "chain_length": p.chain().len(), "metadata": hex::encode(meta.hash())})
                }
            };
            out.emit(v, |v| format!("{}: chain length {} (metadata {})", v["label"], v["chain_length"], v["metadata"]));
        }
        IdCmd::Attest(a) => {
            let req = json!({
                "op": "attest", "label": a.label, "name": a.name, "attester": a.attester,
                "peer": a.peer.peer, "address": a.peer.address.as_ref().map(|x| x.to_string()),
            });
            let v = control::call(dir, req)?;
            out.emit(v, |v| format!("attestation request {} sent", v["request_id"]));
        }
        IdCmd::Request(a) => {
            let req = json!({
                "op": "request", "pseudonym": a.pseudonym, "name": a.name, "algo": a.algo, "version": a.version,
                "range": a.range.map(|(lo, hi)| [lo, hi]), "rounds": a.rounds,
                "peer": a.peer.peer, "address": a.peer.address.as_ref().map(|x| x.to_string()),
            });
            let v = control::call(dir, req)?;
            let id = v["request_id"].as_u64().unwrap_or(0);
            match a.wait {
                None => out.emit(v, |v| format!("verification request {} sent", v["request_id"])),
                Some(secs) => {
                    let v = wait_outcome(dir, id, Duration::from_secs(secs))?;
                    let rejected = (v["outcome"]["accepted"].as_bool() != Some(true)).then(|| v_error(&v));
                    out.emit(v, |v| format!("verification {}: {}", id, v["outcome"]));
                    if let Some(e) = rejected {
                        return Err(CliError::Protocol(e));
                    }
                }
            }
        }
        IdCmd::Allow { request_id } => {
            let v = control::call(dir, json!({"op": "allow", "request_id": request_id}))?;
            out.emit(v, |_| format!("allowed {request_id}"));
        }
        IdCmd::Deny { request_id } => {
            let v = control::call(dir, json!({"op": "deny", "request_id": request_id}))?;
            out.emit(v, |_| format!("denied {request_id}"));
        }
        IdCmd::Status => {
            let v = match control::try_call(dir, json!({"op": "status"})) {
                Some(r) => r?,
                None => {
                    let all = wallet::load_all(dir)?;
                    let ps: Vec<Value> = all.iter().map(|(l, (_, p))| wallet::describe(l, p)).collect();
                    json!({"running": false, "pseudonyms": ps})
                }
            };
            out.emit(v, human_status);
        }
    }
    Ok(())
}

fn v_error(v: &Value) -> String {
    v["outcome"]["error"].as_str().unwrap_or("rejected").to_string()
}

fn wait_outcome(dir: &Path, id: u64, limit: Duration) -> Result<Value, CliError> {
    let until = Instant::now() + limit;
    loop {
        let v = control::call(dir, json!({"op": "outcome", "request_id": id}))?;
        if v["done"].as_bool() == Some(true) {
            return Ok(v);
        }
        if Instant::now() >= until {
            return Err(CliError::Protocol("timeout".into()));
        }
        std::thread::sleep(Duration::from_millis(50));
    }
}

fn human_status(v: &Value) -> String {
    let mut s = String::new();
    if let Some(k) = v["key"].as_str() {
        s.push_str(&format!("node {k} at {} with {} peers\n", v["address"], v["peers"]));
    } else {
        s.push_str("node not running\n");
    }
    for p in v["pseudonyms"].as_array().into_iter().flatten() {
        s.push_str(&format!("pseudonym {} {} chain {}\n", p["label"], p["key"], p["chain_length"]));
        for a in p["attributes"].as_array().into_iter().flatten() {
            s.push_str(&format!("  {} [{}] attesters {}\n", a["name"], a["algo"], a["attesters"]));
        }
    }
    for r in v["outstanding"].as_array().into_iter().flatten() {
        s.push_str(&format!("pending {} {} {}\n", r["request_id"], r["kind"], r["name"]));
    }
    if let Some(o) = v["outcomes"].as_object() {
        for (id, outcome) in o {
            s.push_str(&format!("outcome {id}: {outcome}\n"));
        }
    }
    s.trim_end().to_string()
}

fn read_key(path: &Path) -> Result<KeyPair, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let seed: [u8; 32] = bytes.try_into().map_err(|_| CliError::Io(format!("{}: not a 32-byte key", path.display())))?;
    Ok(KeyPair::from_seed(seed))
}

fn audit_verify(dir: &Path, cfg: &CliConfig, file: &Path, out: Out) -> Result<(), CliError> {
    let key = read_key(&daemon::node_key_path(dir, cfg))?;
    match verify_log_file(file, &key) {
        Ok(n) => {
            out.emit(json!({"file": file.display().to_string(), "records": n, "valid": true}), |_| format!("{}: {n} records, all valid", file.display()));
            Ok(())
        }
        Err(StoreError::Io(e)) => Err(CliError::Io(e.to_string())),
        Err(e) => Err(CliError::Integrity(format!("{}: {e}", file.display()))),
    }
}

fn revoke_cmd(dir: &Path, a: &RevokeArgs, out: Out) -> Result<(), CliError> {
    let req = json!({
        "op": "revoke", "label": a.label, "metadata": a.metadata, "mode": a.mode.to_string(),
        "register": a.register.as_ref().map(|r| r.to_string()),
    });
    let v = match control::try_call(dir, req) {
        Some(r) => r?,
        // Validity-only withdrawal sends nothing, so no node is needed.
        None if a.mode == RevocationMode::Validity => {
            let (_, p) = wallet::load(dir, &a.label)?;
            let kp = p.keypair();
            let metadata_hash: [u8; 32] = hex::decode(&a.metadata)
                .ok()
                .and_then(|b| b.try_into().ok())
                .ok_or_else(|| CliError::usage("metadata must be 32 bytes of hex"))?;
            let att = ipv8_core::ssi::Attestation { metadata_hash, attester_key: kp.public(), signature: kp.sign(&metadata_hash) };
            let entry = revoke(kp, &att, daemon::now_ms()).map_err(CliError::protocol)?;
            json!({"metadata": a.metadata, "mode": "validity", "revoked_at": entry.revoked_at})
        }
        None => return Err(CliError::Unreachable(format!("mode {} needs a running node", a.mode))),
    };
    out.emit(v, |v| format!("revoked {} ({})", v["metadata"], v["mode"]));
    Ok(())
}

fn experiment(a: &ExperimentArgs, params: Option<&Path>, out: Out) -> Result<(), CliError> {
    let mut kv = match params {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::default(),
    };
    let mut flags: Vec<(&str, String)> = Vec::new();
    if let Some(s) = a.seed {
        flags.push(("seed", s.to_string()));
    }
    if let Some(r) = a.runs {
        flags.push(("runs", r.to_string()));
    }
    if let Some(n) = a.nodes {
        let key = if a.name == "sybil" { "population" } else { "nodes" };
        flags.push((key, n.to_string()));
    }
    if let Some(f) = &a.fractions {
        flags.push(("fractions", f.clone()));
    }
    for s in &a.set {
        let (k, v) = s.split_once('=').ok_or_else(|| CliError::Usage(format!("--set wants key=value, got {s:?}")))?;
        flags.push((k.trim(), v.trim().to_string()));
    }
    kv.merge(KvConfig::from_pairs(flags));
    let mut progress = |line: &str| out.emit(json!({"progress": line}), |_| line.to_string());
    let result = run_named(&a.name, kv, &mut progress).map_err(|e| match e {
        ipv8_sim::experiments::ExperimentError::Config(c) => CliError::from(c),
        ipv8_sim::experiments::ExperimentError::Unknown(n) => CliError::Usage(format!("unknown experiment {n:?}")),
        other => CliError::Protocol(other.to_string()),
    })?;
    result.write(&a.out, &a.name)?;
    let csv = a.out.join(format!("{}.csv", a.name));
    let json_path = a.out.join(format!("{}.json", a.name));
    out.emit(
        json!({"experiment": a.name, "csv": csv.display().to_string(), "json": json_path.display().to_string(), "summary": result.summary}),
        |_| format!("wrote {} and {}", csv.display(), json_path.display()),
    );
    Ok(())
}
