mod common;

use common::{ipv8, last_json, ok, RANGE};

#[test]
fn add_attr_grows_the_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let v = ok(ipv8(d, "1", &["id", "create"]));
    assert_eq!(v["chain_length"], 0);
    for (i, age) in ["25", "26"].iter().enumerate() {
        let v = ok(ipv8(d, "1", &["id", "add-attr", "--name", "age", "--value", age, "--algo", RANGE]));
        assert_eq!(v["chain_length"], i as u64 + 1);
    }
    let v = ok(ipv8(d, "1", &["id", "status"]));
    assert_eq!(v["running"], false);
    assert_eq!(v["pseudonyms"][0]["chain_length"], 2);

    let bad = ipv8(d, "1", &["id", "add-attr", "--name", "x", "--value", "1", "--algo", "rot13"]);
    assert_eq!(bad.status.code(), Some(4));
    assert_eq!(last_json(&bad)["error"], "protocol");
    assert_eq!(ipv8(d, "1", &["id", "create"]).status.code(), Some(2));
}

#[test]
fn same_seed_same_pseudonym() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ka = ok(ipv8(a.path(), "9", &["id", "create"]))["key"].clone();
    let kb = ok(ipv8(b.path(), "9", &["id", "create"]))["key"].clone();
    assert_eq!(ka, kb);
}

#[test]
fn config_errors_and_missing_node() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let conf = d.join("node.conf");
    std::fs::write(&conf, "hop_count = 2\nhops = 3\n").unwrap();
    let out = ipv8(d, "1", &["--config", conf.to_str().unwrap(), "node", "run", "--duration", "1"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(last_json(&out)["message"].as_str().unwrap().contains("hops"));

    let out = ipv8(d, "1", &["id", "allow", "5"]);
    assert_eq!(out.status.code(), Some(7));
    let out = ipv8(d, "1", &["experiment", "gossip", "--set", "nodez=5"]);
    assert_eq!(out.status.code(), Some(5));
    assert_eq!(ipv8(d, "1", &["id", "request"]).status.code(), Some(2));
}

#[test]
fn audit_verify_needs_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("node.key"), [7u8; 32]).unwrap();
    let out = ipv8(d, "1", &["audit", "verify", d.join("nope.log").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(6));
}

#[test]
fn validity_revocation_works_offline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(ipv8(d, "1", &["id", "create"]));
    let v = ok(ipv8(d, "1", &["revoke", "--metadata", &"ab".repeat(32), "--mode", "validity"]));
    assert_eq!(v["mode"], "validity");
    assert_eq!(ipv8(d, "1", &["revoke", "--metadata", &"ab".repeat(32), "--mode", "log"]).status.code(), Some(7));
}

#[test]
fn sybil_experiment_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str| {
        let o = dir.path().join(out);
        let args = ["experiment", "sybil", "--fractions", "0,0.5,0.99", "--seed", "7", "--runs", "1", "--nodes", "40", "--set", "limit_ms=300000", "--out", o.to_str().unwrap()];
        let res = ipv8(dir.path(), "1", &args);
        let text = String::from_utf8_lossy(&res.stdout).to_string();
        assert!(res.status.success(), "{text}");
        // Progress lines stream before the summary, all JSON.
        assert!(text.lines().count() >= 4);
        assert!(text.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
        std::fs::read(o.join("sybil.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}
