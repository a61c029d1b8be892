use ipv8_core::ssi::Triple;
use ipv8_core::wire::DropReason;
use ipv8_core::zkp::ALG_RANGE;
use ipv8_sim::experiments::world::{Mode, World, WorldParams};
use ipv8_sim::experiments::{run_named, ExperimentError};
use ipv8_sim::{ConfigError, KvConfig};

fn kv(pairs: &[(&'static str, &str)]) -> KvConfig {
    KvConfig::from_pairs(pairs.iter().map(|(k, v)| (*k, v.to_string())))
}

#[test]
fn ledger_balances_through_a_session_and_an_outage() {
    let mut w = World::build(&WorldParams { nodes: 10, seed: 11, warmup_ms: 5_000, pool: false, ..Default::default() }).unwrap();
    let attr = w.add_attribute("age", ALG_RANGE, "1", 33).unwrap();
    w.attest(Mode::Direct, &attr).unwrap();
    let (_, _, outcome) = w.verify(Mode::Direct, Triple::new("age", ALG_RANGE, "1"), Some((18, 99)), 0).unwrap();
    assert!(outcome.accepted);
    assert!(w.net.ledger_balanced());

    // Neighbours keep probing a node that went away; those datagrams are dropped, not lost.
    w.net.take_offline(5);
    for i in 0..10 {
        if i != 5 {
            w.net.with_node(i, |n, _| n.overlay.config.probe_interval_ms = 100);
            w.net.schedule(i);
        }
    }
    let t = w.net.now() + 3_000;
    w.net.run_until(t);
    assert!(w.net.ledger().dropped.get(&DropReason::NoHost).copied().unwrap_or(0) > 0);
    assert!(w.net.ledger_balanced());
}

#[test]
fn same_seed_same_bytes() {
    let run = |seed: &str| run_named("gossip", kv(&[("nodes", "150"), ("runs", "2"), ("sizes", "10"), ("seed", seed)]), &mut |_| {}).unwrap();
    let (a, b, c) = (run("4"), run("4"), run("5"));
    assert_eq!(a.csv, b.csv);
    assert_eq!(a.summary, b.summary);
    assert_ne!(a.csv, c.csv);
}

#[test]
fn unknown_key_and_bad_value_rejected() {
    let e = run_named("revocation", kv(&[("runs", "1"), ("nodez", "10")]), &mut |_| {}).err().unwrap();
    assert!(matches!(e, ExperimentError::Config(ConfigError::Unknown(k)) if k == "nodez"));
    let e = run_named("circuit", kv(&[("hops", "1,4")]), &mut |_| {}).err().unwrap();
    assert!(matches!(e, ExperimentError::Config(ConfigError::Value { .. })));
    assert!(matches!(run_named("nope", KvConfig::default(), &mut |_| {}), Err(ExperimentError::Unknown(_))));
}
