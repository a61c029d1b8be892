use ipv8_core::anon::{select_relays, AnonEvent, ChannelRole, Purpose};
use ipv8_core::node::NodeEvent;
use ipv8_core::Millis;
use ipv8_sim::experiments::world::{wait_for, World, WorldParams};
use ipv8_sim::SimNetwork;

fn world(nodes: usize, seed: u64, pool: bool) -> World {
    World::build(&WorldParams { nodes, seed, warmup_ms: 5_000, pool, ..Default::default() }).expect("world")
}

/// Long enough for every neighbour to collect the RTT samples relays need.
fn service_world(seed: u64) -> World {
    World::build(&WorldParams { nodes: 20, seed, ..Default::default() }).expect("world")
}

fn index_of(net: &SimNetwork, key: &ipv8_core::dpki::PublicKey) -> usize {
    net.nodes().find(|(_, n)| n.public() == *key).map(|(i, _)| i).expect("known key")
}

/// Builds a manual circuit from `origin` and waits for it. Returns its id and relay indices.
fn build(w: &mut World, origin: usize, hops: usize) -> (u32, Vec<usize>) {
    let (cid, path) = w
        .net
        .with_node(origin, |n, now| {
            let me = n.public();
            n.with_anon(now, |a, table, rng| {
                let path = select_relays(hops, table, &[me], rng).ok()?;
                let cid = a.build_circuit(now, path.clone(), Purpose::Manual, rng).ok()?;
                Some((cid, path))
            })
        })
        .expect("relays available");
    let limit = w.net.now() + 20_000;
    let ready = wait_for(&mut w.net, origin, limit, |ev| match ev {
        NodeEvent::Anon(AnonEvent::CircuitReady { circuit_id, .. }) if *circuit_id == cid => Some(true),
        NodeEvent::Anon(AnonEvent::CircuitClosed { circuit_id, .. }) if *circuit_id == cid => Some(false),
        _ => None,
    });
    assert_eq!(ready, Some(true), "circuit {cid} did not come up");
    let relays = path.iter().map(|(k, _)| index_of(&w.net, k)).collect();
    (cid, relays)
}

fn send(w: &mut World, origin: usize, cid: u32, data: &[u8]) {
    w.net.with_node(origin, |n, now| n.with_anon(now, |a, _, _| a.send_data(cid, data))).expect("send");
}

#[test]
fn one_hop_round_trip() {
    let mut w = world(12, 1, false);
    let (cid, relays) = build(&mut w, 3, 1);
    send(&mut w, 3, cid, b"ping");
    let limit = w.net.now() + 5_000;
    let exit = relays[0];
    let (link, data) = wait_for(&mut w.net, exit, limit, |ev| match ev {
        NodeEvent::Anon(AnonEvent::ExitData { link, data }) => Some((*link, data.clone())),
        _ => None,
    })
    .expect("exit got the data");
    assert_eq!(data, b"ping");
    w.net.with_node(exit, |n, now| n.with_anon(now, |a, _, _| a.exit_reply(&link, b"pong")));
    let limit = w.net.now() + 5_000;
    let back = wait_for(&mut w.net, 3, limit, |ev| match ev {
        NodeEvent::Anon(AnonEvent::CircuitData { circuit_id, data }) if *circuit_id == cid => Some(data.clone()),
        _ => None,
    });
    assert_eq!(back.as_deref(), Some(&b"pong"[..]));
}

#[test]
fn each_hop_sees_different_bytes() {
    let mut w = world(12, 2, false);
    let (cid, relays) = build(&mut w, 4, 2);
    w.net.capture = Some(Vec::new());
    let secret = b"only-the-exit-reads-this";
    send(&mut w, 4, cid, secret);
    let limit = w.net.now() + 5_000;
    let got = wait_for(&mut w.net, relays[1], limit, |ev| match ev {
        NodeEvent::Anon(AnonEvent::ExitData { data, .. }) => Some(data.clone()),
        _ => None,
    });
    assert_eq!(got.as_deref(), Some(&secret[..]));
    let captured = w.net.capture.take().unwrap();
    let leg = |from: usize, to: usize| {
        captured
            .iter()
            .find(|c| c.from == from as u64 && c.to == to as u64)
            .map(|c| c.bytes.clone())
            .expect("datagram on this leg")
    };
    let (first, second) = (leg(4, relays[0]), leg(relays[0], relays[1]));
    let contains = |hay: &[u8]| hay.windows(secret.len()).any(|x| x == secret);
    assert!(!contains(&first) && !contains(&second));
    assert_ne!(first[130..], second[130..]);
    // One layer comes off at the first relay.
    assert!(first.len() > second.len());
}

#[test]
fn tampering_relay_tears_circuit_down() {
    let mut w = world(14, 3, false);
    let origin = 5;
    let (cid, relays) = build(&mut w, origin, 3);
    let middle = relays[1];
    w.net.with_node(middle, |n, _| n.anon.config.tamper_relayed = true);
    send(&mut w, origin, cid, b"hello");
    let limit = w.net.now() + 5_000;
    let mut tamper_at = None;
    let mut closed = false;
    w.net.run_until_with(limit, |net| {
        for (_, who, ev) in net.events.drain(..) {
            match ev {
                NodeEvent::Anon(AnonEvent::TamperDetected { .. }) => tamper_at = Some(who),
                NodeEvent::Anon(AnonEvent::CircuitClosed { circuit_id, .. }) if who == origin && circuit_id == cid => {
                    closed = true
                }
                NodeEvent::Anon(AnonEvent::ExitData { .. }) => panic!("tampered data reached the exit"),
                _ => {}
            }
        }
        closed
    });
    assert_eq!(tamper_at, Some(relays[2]));
    assert!(closed);
    assert!(w.net.node(origin).anon.circuit(cid).is_none());
}

#[test]
fn pool_refills_after_circuits_close() {
    let mut w = world(12, 4, true);
    let origin = 6;
    let pool_min = w.net.node(origin).anon.config.pool_min;
    assert!(w.net.node(origin).anon.ready_pool() >= pool_min);
    let pool: Vec<u32> = w
        .net
        .node(origin)
        .anon
        .circuits()
        .filter(|c| c.purpose == Purpose::Pool)
        .map(|c| c.circuit_id)
        .collect();
    w.net.with_node(origin, |n, now| {
        n.with_anon(now, |a, _, _| {
            for cid in &pool {
                a.close_circuit(*cid);
            }
        })
    });
    assert_eq!(w.net.node(origin).anon.ready_pool(), 0);
    let t = w.net.now() + 10_000;
    w.net.run_until(t);
    let anon = &w.net.node(origin).anon;
    assert!(anon.ready_pool() >= pool_min);
    assert!(anon.circuits().all(|c| !pool.contains(&c.circuit_id)));
}

#[test]
fn hidden_service_channel_opens_on_both_ends() {
    let mut w = service_world(5);
    w.publish_services().expect("publish");
    let (client, service) = (w.verifier, w.subject);
    let key = w.key(service);
    let ch = w.net.with_node(client, |n, now| n.connect_hidden(now, &key)).expect("connect");
    let limit = w.net.now() + 30_000;
    let mut client_open = false;
    let mut service_open = false;
    w.net.run_until_with(limit, |net| {
        for (_, who, ev) in net.events.drain(..) {
            match ev {
                NodeEvent::Anon(AnonEvent::ChannelOpen { channel, role: ChannelRole::Client }) if who == client => {
                    client_open |= channel == ch
                }
                NodeEvent::Anon(AnonEvent::ChannelOpen { role: ChannelRole::Service, .. }) if who == service => {
                    service_open = true
                }
                _ => {}
            }
        }
        client_open && service_open
    });
    assert!(client_open && service_open);
}

#[test]
fn offline_service_times_out() {
    let mut w = service_world(6);
    w.publish_services().expect("publish");
    let (client, service) = (w.verifier, w.subject);
    let key = w.key(service);
    w.net.take_offline(service);
    let ch = w.net.with_node(client, |n, now| n.connect_hidden(now, &key)).expect("connect starts");
    let started = w.net.now();
    let timeout: Millis = w.net.node(client).anon.config.rendezvous_timeout_ms;
    let failed = wait_for(&mut w.net, client, started + timeout + 5_000, |ev| match ev {
        NodeEvent::Anon(AnonEvent::ChannelFailed { channel, .. }) if *channel == ch => Some(()),
        NodeEvent::Anon(AnonEvent::ChannelOpen { channel, .. }) if *channel == ch => panic!("opened to an offline service"),
        _ => None,
    });
    assert!(failed.is_some());
    assert!(w.net.now() - started <= timeout + 1);
}
