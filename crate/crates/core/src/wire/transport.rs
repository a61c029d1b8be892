//! Datagram endpoints: a UDP socket adapter and an in-memory simulated fabric.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::net::{SocketAddr, SocketAddrV4, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::{TransportAddress, WireError};
use crate::Millis;

/// Invoked once per received datagram. Implementations only enqueue.
pub type ReceiveCallback = Box<dyn FnMut(TransportAddress, Vec<u8>) + Send>;

/// Connectionless send half of an endpoint.
pub trait Endpoint: Send {
    fn local_address(&self) -> TransportAddress;
    /// Fire-and-forget; failures are not reported to the caller.
    fn send(&self, to: &TransportAddress, bytes: &[u8]);
}

pub enum EndpointConfig {
    Udp { bind: SocketAddrV4 },
    Sim { fabric: SharedFabric, node: u64 },
}

pub fn open_endpoint(config: EndpointConfig, on_receive: ReceiveCallback) -> Result<Box<dyn Endpoint>, WireError> {
    match config {
        EndpointConfig::Udp { bind } => Ok(Box::new(UdpEndpoint::bind(bind, on_receive)?)),
        EndpointConfig::Sim { fabric, node } => {
            fabric.callbacks.lock().unwrap().insert(node, on_receive);
            Ok(Box::new(SimEndpoint { fabric, node }))
        }
    }
}

struct UdpEndpoint {
    socket: Arc<UdpSocket>,
    local: SocketAddrV4,
    shutdown: Arc<AtomicBool>,
}

impl UdpEndpoint {
    fn bind(addr: SocketAddrV4, mut on_receive: ReceiveCallback) -> Result<Self, WireError> {
        let socket = UdpSocket::bind(addr)?;
        socket.set_read_timeout(Some(Duration::from_millis(100)))?;
        let local = match socket.local_addr()? {
            SocketAddr::V4(a) => a,
            SocketAddr::V6(_) => unreachable!("bound to an IPv4 address"),
        };
        let socket = Arc::new(socket);
        let shutdown = Arc::new(AtomicBool::new(false));
        let (rx_socket, rx_shutdown) = (socket.clone(), shutdown.clone());
        thread::Builder::new()
            .name(format!("udp-recv-{local}"))
            .spawn(move || {
                let mut buf = vec![0u8; 65536];
                while !rx_shutdown.load(Ordering::Relaxed) {
                    match rx_socket.recv_from(&mut buf) {
                        Ok((n, SocketAddr::V4(from))) => on_receive(TransportAddress::Udp(from), buf[..n].to_vec()),
                        Ok(_) => {}
                        Err(_) => {}
                    }
                }
            })?;
        Ok(UdpEndpoint { socket, local, shutdown })
    }
}

impl Endpoint for UdpEndpoint {
    fn local_address(&self) -> TransportAddress {
        TransportAddress::Udp(self.local)
    }

    fn send(&self, to: &TransportAddress, bytes: &[u8]) {
        if let TransportAddress::Udp(addr) = to {
            let _ = self.socket.send_to(bytes, addr);
        }
    }
}

impl Drop for UdpEndpoint {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::Relaxed);
    }
}

/// One-way link latency between simulated nodes.
pub trait LatencyModel: Send {
    fn one_way_ms(&self, from: u64, to: u64) -> Millis;
}

pub struct ConstantLatency(pub Millis);

impl LatencyModel for ConstantLatency {
    fn one_way_ms(&self, _from: u64, _to: u64) -> Millis {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DropReason {
    Nat,
    Adversary,
    Blacklist,
    Undecodable,
    NoHost,
}

/// Per-run datagram accounting. `sent` must equal delivered + dropped + in flight.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ledger {
    pub sent: u64,
    pub delivered: u64,
    pub bytes_sent: u64,
    pub dropped: std::collections::BTreeMap<DropReason, u64>,
}

impl Ledger {
    pub fn dropped_total(&self) -> u64 {
        self.dropped.values().sum()
    }

    pub fn record_drop(&mut self, reason: DropReason) {
        *self.dropped.entry(reason).or_default() += 1;
    }
}

#[derive(Debug)]
pub enum FabricEvent {
    Datagram { from: u64, to: u64, bytes: Vec<u8> },
    Wake { node: u64 },
}

#[derive(Debug)]
struct Scheduled {
    at: Millis,
    seq: u64,
    event: FabricEvent,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

/// Deterministic datagram scheduler with latency, NAT filtering and a ledger.
///
/// Ties in delivery time are broken by scheduling order, so a fixed sequence
/// of calls always produces the same event trace. A node marked as NATed only
/// accepts datagrams from addresses it has previously sent to.
pub struct SimFabric {
    now: Millis,
    seq: u64,
    base_delay: Millis,
    latency: Box<dyn LatencyModel>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    natted: HashSet<u64>,
    pinholes: HashMap<u64, HashSet<u64>>,
    ledger: Ledger,
    in_flight: u64,
}

impl SimFabric {
    pub fn new(latency: Box<dyn LatencyModel>, base_delay: Millis) -> Self {
        SimFabric {
            now: 0,
            seq: 0,
            base_delay,
            latency,
            queue: BinaryHeap::new(),
            natted: HashSet::new(),
            pinholes: HashMap::new(),
            ledger: Ledger::default(),
            in_flight: 0,
        }
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut Ledger {
        &mut self.ledger
    }

    pub fn in_flight(&self) -> u64 {
        self.in_flight
    }

    pub fn latency(&self, from: u64, to: u64) -> Millis {
        self.base_delay + self.latency.one_way_ms(from, to)
    }

    pub fn set_nat(&mut self, node: u64, natted: bool) {
        if natted {
            self.natted.insert(node);
        } else {
            self.natted.remove(&node);
        }
    }

    pub fn send(&mut self, from: u64, to: u64, bytes: Vec<u8>) {
        self.send_delayed(from, to, bytes, 0);
    }

    /// Sends with an extra sender-side delay on top of the link latency.
    pub fn send_delayed(&mut self, from: u64, to: u64, bytes: Vec<u8>, extra: Millis) {
        if self.natted.contains(&from) {
            self.pinholes.entry(from).or_default().insert(to);
        }
        self.ledger.sent += 1;
        self.ledger.bytes_sent += bytes.len() as u64;
        self.in_flight += 1;
        let at = self.now + extra + self.latency(from, to);
        self.push(at, FabricEvent::Datagram { from, to, bytes });
    }

    pub fn schedule_wake(&mut self, node: u64, at: Millis) {
        self.push(at.max(self.now), FabricEvent::Wake { node });
    }

    fn push(&mut self, at: Millis, event: FabricEvent) {
        self.seq += 1;
        self.queue.push(Reverse(Scheduled { at, seq: self.seq, event }));
    }

    pub fn peek_time(&self) -> Option<Millis> {
        self.queue.peek().map(|Reverse(s)| s.at)
    }

    /// Advances the clock to the next event. NAT-filtered datagrams are
    /// recorded in the ledger and skipped.
    pub fn pop(&mut self) -> Option<(Millis, FabricEvent)> {
        loop {
            let Reverse(s) = self.queue.pop()?;
            self.now = s.at;
            if let FabricEvent::Datagram { from, to, .. } = &s.event {
                self.in_flight -= 1;
                let blocked = self.natted.contains(to)
                    && !self.pinholes.get(to).is_some_and(|p| p.contains(from));
                if blocked {
                    self.ledger.record_drop(DropReason::Nat);
                    continue;
                }
                self.ledger.delivered += 1;
            }
            return Some((s.at, s.event));
        }
    }

    /// Moves the clock forward without processing events (never backwards).
    pub fn advance_to(&mut self, t: Millis) {
        self.now = self.now.max(t);
    }
}

/// A fabric shared by callback-driven simulated endpoints.
#[derive(Clone)]
pub struct SharedFabric {
    pub fabric: Arc<Mutex<SimFabric>>,
    callbacks: Arc<Mutex<HashMap<u64, ReceiveCallback>>>,
}

impl SharedFabric {
    pub fn new(fabric: SimFabric) -> Self {
        SharedFabric { fabric: Arc::new(Mutex::new(fabric)), callbacks: Arc::default() }
    }

    pub fn now(&self) -> Millis {
        self.fabric.lock().unwrap().now()
    }
}

/// Delivers every datagram due at or before `until`, invoking receive callbacks.
/// Returns the number of callbacks fired.
pub fn run_fabric_until(shared: &SharedFabric, until: Millis) -> usize {
    let mut fired = 0;
    loop {
        let next = {
            let mut fabric = shared.fabric.lock().unwrap();
            match fabric.peek_time() {
                Some(t) if t <= until => fabric.pop(),
                _ => {
                    fabric.advance_to(until);
                    None
                }
            }
        };
        match next {
            Some((_, FabricEvent::Datagram { from, to, bytes })) => {
                let cb = shared.callbacks.lock().unwrap().remove(&to);
                match cb {
                    Some(mut cb) => {
                        cb(TransportAddress::Sim(from), bytes);
                        fired += 1;
                        shared.callbacks.lock().unwrap().insert(to, cb);
                    }
                    None => shared.fabric.lock().unwrap().ledger_mut().record_drop(DropReason::NoHost),
                }
            }
            Some((_, FabricEvent::Wake { .. })) => {}
            None => return fired,
        }
    }
}

struct SimEndpoint {
    fabric: SharedFabric,
    node: u64,
}

impl Endpoint for SimEndpoint {
    fn local_address(&self) -> TransportAddress {
        TransportAddress::Sim(self.node)
    }

    fn send(&self, to: &TransportAddress, bytes: &[u8]) {
        if let TransportAddress::Sim(to) = to {
            self.fabric.fabric.lock().unwrap().send(self.node, *to, bytes.to_vec());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::mpsc;

    fn recorder() -> (ReceiveCallback, mpsc::Receiver<(TransportAddress, Vec<u8>, ())>) {
        let (tx, rx) = mpsc::channel();
        (Box::new(move |a, b| tx.send((a, b, ())).unwrap()), rx)
    }

    #[test]
    fn sim_delivery_at_base_delay() {
        let shared = SharedFabric::new(SimFabric::new(Box::new(ConstantLatency(0)), 5));
        let (cb_a, _rx_a) = recorder();
        let (cb_b, rx_b) = recorder();
        let a = open_endpoint(EndpointConfig::Sim { fabric: shared.clone(), node: 0 }, cb_a).unwrap();
        let _b = open_endpoint(EndpointConfig::Sim { fabric: shared.clone(), node: 1 }, cb_b).unwrap();
        a.send(&TransportAddress::Sim(1), b"x");
        assert_eq!(run_fabric_until(&shared, 4), 0);
        assert!(rx_b.try_recv().is_err());
        assert_eq!(run_fabric_until(&shared, 5), 1);
        let (from, bytes, ()) = rx_b.try_recv().unwrap();
        assert_eq!(from, TransportAddress::Sim(0));
        assert_eq!(bytes, b"x");
    }

    #[test]
    fn nat_drops_until_punctured() {
        let shared = SharedFabric::new(SimFabric::new(Box::new(ConstantLatency(10)), 0));
        shared.fabric.lock().unwrap().set_nat(1, true);
        let (cb_a, rx_a) = recorder();
        let (cb_b, rx_b) = recorder();
        let a = open_endpoint(EndpointConfig::Sim { fabric: shared.clone(), node: 0 }, cb_a).unwrap();
        let b = open_endpoint(EndpointConfig::Sim { fabric: shared.clone(), node: 1 }, cb_b).unwrap();

        a.send(&TransportAddress::Sim(1), b"early");
        run_fabric_until(&shared, 100);
        assert!(rx_b.try_recv().is_err());
        assert_eq!(shared.fabric.lock().unwrap().ledger().dropped[&DropReason::Nat], 1);

        b.send(&TransportAddress::Sim(0), b"puncture");
        run_fabric_until(&shared, 200);
        assert_eq!(rx_a.try_recv().unwrap().1, b"puncture");
        a.send(&TransportAddress::Sim(1), b"late");
        run_fabric_until(&shared, 300);
        assert_eq!(rx_b.try_recv().unwrap().1, b"late");

        let fabric = shared.fabric.lock().unwrap();
        let l = fabric.ledger();
        assert_eq!(l.sent, l.delivered + l.dropped_total() + fabric.in_flight());
    }

    #[test]
    fn equal_times_keep_send_order() {
        let mut f = SimFabric::new(Box::new(ConstantLatency(3)), 0);
        for i in 0..10u8 {
            f.send(0, 1, vec![i]);
        }
        let order: Vec<u8> = std::iter::from_fn(|| f.pop())
            .map(|(_, e)| match e {
                FabricEvent::Datagram { bytes, .. } => bytes[0],
                FabricEvent::Wake { .. } => unreachable!(),
            })
            .collect();
        assert_eq!(order, (0..10).collect::<Vec<_>>());
    }
}
