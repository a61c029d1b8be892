//! `node run`: one UDP node plus the control socket, driven from a single loop.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::os::unix::net::UnixListener;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use ipv8_core::anon::{AnonConfig, AnonEvent, ChannelRole};
use ipv8_core::dpki::{load_or_create_key, PublicKey};
use ipv8_core::node::{Node, NodeConfig, NodeEvent};
use ipv8_core::ssi::{Attestation, Channel, SsiConfig, Triple};
use ipv8_core::store::{AuditLog, RevocationMode};
use ipv8_core::wire::{open_endpoint, Endpoint, EndpointConfig, TransportAddress};
use ipv8_core::Millis;
use serde_json::{json, Value};

use crate::config::CliConfig;
use crate::control;
use crate::error::CliError;
use crate::output::Out;
use crate::seed;
use crate::wallet::{self, AttrSpec, Entry};

enum Input {
    Datagram(TransportAddress, Vec<u8>),
    Control(Value, Sender<Value>),
}

/// Wall-clock milliseconds; validity terms in metadata use the same clock.
pub fn now_ms() -> Millis {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as Millis).unwrap_or(0)
}

pub fn node_key_path(dir: &Path, cfg: &CliConfig) -> PathBuf {
    cfg.key.clone().unwrap_or_else(|| dir.join("node.key"))
}

pub fn audit_path(dir: &Path) -> PathBuf {
    dir.join("audit.log")
}

/// Where a request goes once it has a channel.
enum Route {
    Ready(Channel),
    /// Waiting for this covert channel to open.
    Pending(u64),
}

struct Daemon {
    node: Node,
    endpoint: Box<dyn Endpoint>,
    dir: PathBuf,
    covert: bool,
    entries: BTreeMap<PublicKey, Entry>,
    audit: AuditLog,
    audit_written: usize,
    /// Requests parked until their covert channel opens.
    parked: HashMap<u64, (Value, Sender<Value>)>,
    open_channels: HashMap<PublicKey, u64>,
    announced: BTreeSet<u64>,
    published: bool,
    next_publish: Millis,
    stop: bool,
    out: Out,
}

pub fn run(dir: &Path, cfg: CliConfig, duration: Option<Duration>, out: Out) -> Result<(), CliError> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let key = load_or_create_key(&node_key_path(dir, &cfg), seed::derived("node"))?;
    let (tx, rx) = mpsc::channel::<Input>();

    let udp_tx = tx.clone();
    let endpoint = open_endpoint(
        EndpointConfig::Udp { bind: cfg.bind },
        Box::new(move |from, bytes| {
            let _ = udp_tx.send(Input::Datagram(from, bytes));
        }),
    )
    .map_err(|e| CliError::Io(e.to_string()))?;

    let config = NodeConfig {
        anon: AnonConfig { hop_count: cfg.hop_count, ..Default::default() },
        ssi: SsiConfig { covert_required: cfg.covert_required, ..Default::default() },
        register_role: cfg.register,
        ..Default::default()
    };
    let mut node = Node::new(config, key.clone(), endpoint.local_address(), seed::derived_u64("node-rng"));
    node.overlay.table.bootstrap = cfg.bootstrap.clone();

    let mut entries = BTreeMap::new();
    for (_, (entry, p)) in wallet::load_all(dir)? {
        let k = node.ssi.add_pseudonym(p);
        entries.insert(k, entry);
    }
    let audit = AuditLog::open(&audit_path(dir), &key).map_err(|e| CliError::Integrity(e.to_string()))?;

    let sock = control::socket_path(dir);
    let _ = fs::remove_file(&sock);
    let listener = UnixListener::bind(&sock)?;
    spawn_control(listener, tx);

    let info = json!({
        "event": "listening",
        "key": key.public().to_hex(),
        "address": endpoint.local_address().to_string(),
        "control": sock.display().to_string(),
        "pseudonyms": entries.values().map(|e| e.label.clone()).collect::<Vec<_>>(),
    });
    fs::write(dir.join("node.json"), info.to_string())?;
    out.emit(info, |v| format!("listening on {} as {} (control {})", v["address"], v["key"], v["control"]));

    let mut d = Daemon {
        node,
        endpoint,
        dir: dir.to_path_buf(),
        covert: cfg.covert_required,
        entries,
        audit,
        audit_written: 0,
        parked: HashMap::new(),
        open_channels: HashMap::new(),
        announced: BTreeSet::new(),
        published: false,
        next_publish: 0,
        stop: false,
        out,
    };
    let result = d.run_loop(&rx, duration.map(|t| Instant::now() + t));
    let _ = fs::remove_file(&sock);
    result
}

fn spawn_control(listener: UnixListener, tx: Sender<Input>) {
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let tx = tx.clone();
            thread::spawn(move || {
                let Ok(mut w) = stream.try_clone() else { return };
                for line in BufReader::new(stream).lines() {
                    let Ok(line) = line else { return };
                    let reply = match serde_json::from_str::<Value>(&line) {
                        Ok(req) => {
                            let (rtx, rrx) = mpsc::channel();
                            if tx.send(Input::Control(req, rtx)).is_err() {
                                return;
                            }
                            match rrx.recv() {
                                Ok(v) => v,
                                Err(_) => return,
                            }
                        }
                        Err(e) => control::err(&CliError::Usage(format!("bad request: {e}"))),
                    };
                    if writeln!(w, "{reply}").is_err() {
                        return;
                    }
                }
            });
        }
    });
}

fn field<'a>(req: &'a Value, k: &str) -> Result<&'a str, CliError> {
    req.get(k).and_then(Value::as_str).ok_or_else(|| CliError::Usage(format!("missing {k}")))
}

fn outcome_json(o: &ipv8_core::ssi::Outcome) -> Value {
    json!({"accepted": o.accepted, "confidence": o.confidence, "error": o.error.map(|e| e.to_string())})
}

impl Daemon {
    fn run_loop(&mut self, rx: &Receiver<Input>, until: Option<Instant>) -> Result<(), CliError> {
        while !self.stop {
            if until.is_some_and(|t| Instant::now() >= t) {
                break;
            }
            let now = now_ms();
            let wait = self.node.next_deadline().map_or(200, |t| t.saturating_sub(now)).clamp(1, 200);
            match rx.recv_timeout(Duration::from_millis(wait)) {
                Ok(Input::Datagram(from, bytes)) => self.node.handle_datagram(now_ms(), &from, &bytes),
                Ok(Input::Control(req, reply)) => self.control(req, reply),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
            let now = now_ms();
            self.node.tick(now);
            self.maybe_publish(now);
            self.flush()?;
        }
        Ok(())
    }

    fn maybe_publish(&mut self, now: Millis) {
        if !self.covert || self.published || now < self.next_publish {
            return;
        }
        match self.node.publish_hidden_service(now) {
            Ok(_) => {
                self.published = true;
                log::info!("hidden service published");
            }
            Err(e) => {
                log::debug!("publish deferred: {e}");
                self.next_publish = now + 5_000;
            }
        }
    }

    /// Sends queued datagrams and reacts to node events.
    fn flush(&mut self) -> Result<(), CliError> {
        for (to, bytes) in self.node.drain_outbox() {
            self.endpoint.send(&to, &bytes);
        }
        for ev in self.node.drain_events() {
            self.on_event(ev)?;
        }
        for p in self.node.ssi.outstanding() {
            if self.announced.insert(p.request_id) {
                let v = json!({
                    "event": "pending",
                    "request_id": p.request_id,
                    "kind": format!("{:?}", p.kind).to_lowercase(),
                    "name": p.name,
                    "algo": p.algorithm,
                    "from": p.counterparty.map(|k| k.to_hex()),
                });
                self.out.emit(v, |v| format!("pending {} request {} for {:?}; `id allow {}` to answer", v["kind"], v["request_id"], p.name, v["request_id"]));
            }
        }
        let records = self.node.ssi.audit_records();
        for rec in &records[self.audit_written..] {
            self.audit.append(rec).map_err(|e| CliError::Io(e.to_string()))?;
        }
        self.audit_written = records.len();
        // Anything that queued work during event handling goes out now.
        for (to, bytes) in self.node.drain_outbox() {
            self.endpoint.send(&to, &bytes);
        }
        Ok(())
    }

    fn on_event(&mut self, ev: NodeEvent) -> Result<(), CliError> {
        match ev {
            NodeEvent::Attested { request_id, attestation } => {
                self.persist_attestation(&attestation)?;
                let v = json!({"event": "attested", "request_id": request_id, "attester": attestation.attester_key.to_hex(), "metadata": hex::encode(attestation.metadata_hash)});
                self.out.emit(v, |v| format!("attested: request {} by {}", v["request_id"], v["attester"]));
            }
            NodeEvent::Verified { request_id, outcome } => {
                let v = json!({"event": "verified", "request_id": request_id, "outcome": outcome_json(&outcome)});
                self.out.emit(v, |v| format!("verification {} finished: {}", request_id, v["outcome"]));
            }
            NodeEvent::Anon(AnonEvent::ChannelOpen { channel, role: ChannelRole::Client }) => {
                if let Some((req, reply)) = self.parked.remove(&channel) {
                    if let Ok(peer) = field(&req, "peer").and_then(wallet::parse_key) {
                        self.open_channels.insert(peer, channel);
                    }
                    let r = self.apply_routed(&req, Channel::Covert(channel));
                    let _ = reply.send(r.map_or_else(|e| control::err(&e), control::ok));
                }
            }
            NodeEvent::Anon(AnonEvent::ChannelFailed { channel, error }) => {
                self.open_channels.retain(|_, c| *c != channel);
                if let Some((_, reply)) = self.parked.remove(&channel) {
                    let _ = reply.send(control::err(&CliError::protocol(error)));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn persist_attestation(&self, att: &Attestation) -> Result<(), CliError> {
        for (k, entry) in &self.entries {
            let holds = self.node.ssi.pseudonym(k).is_some_and(|p| p.attestations_for(&att.metadata_hash).contains(att));
            if holds {
                entry.file.append_attestation(att).map_err(CliError::protocol)?;
            }
        }
        Ok(())
    }

    fn control(&mut self, req: Value, reply: Sender<Value>) {
        let op = req.get("op").and_then(Value::as_str).unwrap_or("").to_string();
        let result = match op.as_str() {
            "attest" | "request" => match self.route(&req) {
                Ok(Route::Ready(ch)) => self.apply_routed(&req, ch),
                Ok(Route::Pending(ch)) => {
                    self.parked.insert(ch, (req, reply));
                    return;
                }
                Err(e) => Err(e),
            },
            _ => self.apply(&op, &req),
        };
        let _ = reply.send(result.map_or_else(|e| control::err(&e), control::ok));
    }

    /// Picks a channel to `peer`: direct when allowed, otherwise covert.
    fn route(&mut self, req: &Value) -> Result<Route, CliError> {
        let peer = wallet::parse_key(field(req, "peer")?)?;
        if let Some(addr) = req.get("address").and_then(Value::as_str) {
            let addr: TransportAddress = addr.parse().map_err(CliError::Usage)?;
            self.node.add_contact(peer, addr);
        }
        if !self.covert {
            if !self.node.contacts.contains_key(&peer) {
                return Err(CliError::Usage(format!("no address known for {peer}; pass --address")));
            }
            return Ok(Route::Ready(Channel::Direct(peer)));
        }
        if let Some(ch) = self.open_channels.get(&peer) {
            return Ok(Route::Ready(Channel::Covert(*ch)));
        }
        let ch = self.node.connect_hidden(now_ms(), &peer).map_err(CliError::protocol)?;
        Ok(Route::Pending(ch))
    }

    fn pseudonym_key(&self, label: &str) -> Result<PublicKey, CliError> {
        self.entries
            .iter()
            .find(|(_, e)| e.label == label)
            .map(|(k, _)| *k)
            .ok_or_else(|| CliError::Usage(format!("no pseudonym {label:?}")))
    }

    fn apply_routed(&mut self, req: &Value, channel: Channel) -> Result<Value, CliError> {
        let now = now_ms();
        match field(req, "op")? {
            "attest" => {
                let subject = self.pseudonym_key(field(req, "label")?)?;
                let attester = wallet::parse_key(field(req, "attester")?)?;
                let name = field(req, "name")?;
                let p = self.node.ssi.pseudonym(&subject).expect("loaded");
                let attr = wallet::find_by_name(p, name)
                    .ok_or_else(|| CliError::Usage(format!("no attribute {name:?}")))?
                    .attribute_hash;
                let id = self
                    .node
                    .with_ssi(now, |s| s.request_attestation(channel, &subject, attester, &attr))
                    .map_err(CliError::protocol)?;
                Ok(json!({"request_id": id}))
            }
            "request" => {
                let subject = wallet::parse_key(field(req, "pseudonym")?)?;
                let triple = Triple::new(field(req, "name")?, field(req, "algo")?, req["version"].as_str().unwrap_or("1"));
                let range = match req.get("range").and_then(Value::as_array) {
                    Some(r) if r.len() == 2 => Some((r[0].as_u64().unwrap_or(0), r[1].as_u64().unwrap_or(0))),
                    _ => None,
                };
                let rounds = req.get("rounds").and_then(Value::as_u64).unwrap_or(0) as u32;
                let id = self
                    .node
                    .with_ssi(now, |s| s.request_verification(now, channel, subject, triple, range, rounds))
                    .map_err(CliError::protocol)?;
                Ok(json!({"request_id": id}))
            }
            other => Err(CliError::Usage(format!("unknown op {other:?}"))),
        }
    }

    fn apply(&mut self, op: &str, req: &Value) -> Result<Value, CliError> {
        let now = now_ms();
        match op {
            "status" => Ok(self.status()),
            "create" => {
                let label = field(req, "label")?;
                let (entry, p) = wallet::create(&self.dir, label)?;
                let v = wallet::describe(label, &p);
                let k = self.node.ssi.add_pseudonym(p);
                self.entries.insert(k, entry);
                Ok(v)
            }
            "add_attr" => {
                let label = field(req, "label")?;
                let spec = AttrSpec::from_json(&req["attr"])?;
                let k = self.pseudonym_key(label)?;
                let p = self.node.ssi.pseudonym_mut(&k).expect("loaded");
                let meta = wallet::add_attribute(&self.entries[&k], p, &spec)?;
                Ok(json!({"label": label, "chain_length": p.chain().len(), "metadata": hex::encode(meta.hash())}))
            }
            "allow" | "deny" => {
                let id = req.get("request_id").and_then(Value::as_u64).ok_or_else(|| CliError::usage("missing request_id"))?;
                let r = if op == "allow" {
                    self.node.with_ssi(now, |s| s.allow(now, id))
                } else {
                    self.node.with_ssi(now, |s| s.deny(id))
                };
                r.map_err(CliError::protocol)?;
                Ok(json!({"request_id": id, "decision": op}))
            }
            "outcome" => {
                let id = req.get("request_id").and_then(Value::as_u64).ok_or_else(|| CliError::usage("missing request_id"))?;
                Ok(match self.node.ssi.outcome(id) {
                    Some(o) => json!({"request_id": id, "done": true, "outcome": outcome_json(&o)}),
                    None => json!({"request_id": id, "done": false}),
                })
            }
            "revoke" => {
                let k = self.pseudonym_key(field(req, "label")?)?;
                let metadata_hash: [u8; 32] = hex::decode(field(req, "metadata")?)
                    .ok()
                    .and_then(|b| b.try_into().ok())
                    .ok_or_else(|| CliError::usage("metadata must be 32 bytes of hex"))?;
                let mode: RevocationMode = field(req, "mode")?.parse().map_err(CliError::usage)?;
                let register = match req.get("register").and_then(Value::as_str) {
                    Some(a) => Some(a.parse::<TransportAddress>().map_err(CliError::Usage)?),
                    None => None,
                };
                let kp = self.node.ssi.pseudonym(&k).expect("loaded").keypair().clone();
                let att = Attestation { metadata_hash, attester_key: kp.public(), signature: kp.sign(&metadata_hash) };
                let entry = self.node.revoke(now, &kp, &att, mode, register.as_ref()).map_err(CliError::protocol)?;
                Ok(json!({"metadata": hex::encode(entry.metadata_hash), "mode": mode.to_string(), "revoked_at": entry.revoked_at}))
            }
            "shutdown" => {
                self.stop = true;
                Ok(json!({"stopping": true}))
            }
            other => Err(CliError::Usage(format!("unknown op {other:?}"))),
        }
    }

    fn status(&self) -> Value {
        let pseudonyms: Vec<Value> = self
            .entries
            .iter()
            .filter_map(|(k, e)| self.node.ssi.pseudonym(k).map(|p| wallet::describe(&e.label, p)))
            .collect();
        let outstanding: Vec<Value> = self
            .node
            .ssi
            .outstanding()
            .iter()
            .map(|p| {
                json!({
                    "request_id": p.request_id,
                    "kind": format!("{:?}", p.kind).to_lowercase(),
                    "name": p.name,
                    "algo": p.algorithm,
                    "from": p.counterparty.map(|k| k.to_hex()),
                })
            })
            .collect();
        let outcomes: BTreeMap<String, Value> =
            self.node.ssi.outcomes().iter().map(|(id, o)| (id.to_string(), outcome_json(o))).collect();
        json!({
            "key": self.node.public().to_hex(),
            "address": self.node.address().to_string(),
            "peers": self.node.overlay.table.len(),
            "hidden_service": self.published,
            "pseudonyms": pseudonyms,
            "outstanding": outstanding,
            "outcomes": outcomes,
        })
    }
}
