//! Subject, attester and verifier as separate processes over loopback UDP.

mod common;

use common::{ipv8, ok, pending, Daemon, RANGE};

#[test]
fn attest_verify_and_audit_over_udp() {
    let root = tempfile::tempdir().unwrap();
    let (s, a, v) = (root.path().join("s"), root.path().join("a"), root.path().join("v"));
    let subject_ps = ok(ipv8(&s, "s", &["id", "create"]))["key"].as_str().unwrap().to_string();
    let attester_ps = ok(ipv8(&a, "a", &["id", "create"]))["key"].as_str().unwrap().to_string();
    ok(ipv8(&s, "s", &["id", "add-attr", "--name", "age", "--value", "25", "--algo", RANGE]));

    let sd = Daemon::start(&s, "s", &["--direct"]);
    let ad = Daemon::start(&a, "a", &["--direct"]);
    let vd = Daemon::start(&v, "v", &["--direct"]);

    // Flow A: the attester decides by hand.
    ok(ipv8(&s, "s", &["id", "attest", "--name", "age", "--attester", &attester_ps, "--peer", &ad.key, "--address", &ad.address]));
    let rid = pending(&a, "a", "attest");
    ok(ipv8(&a, "a", &["id", "allow", &rid.to_string()]));

    // Flow B: refused once, then allowed.
    let request = |range: &str| {
        let args = ["id", "request", "--pseudonym", &subject_ps, "--name", "age", "--algo", RANGE, "--range", range, "--peer", &sd.key, "--address", &sd.address, "--wait", "20"];
        let (v, args) = (v.clone(), args.map(String::from));
        std::thread::spawn(move || ipv8(&v, "v", &args.iter().map(String::as_str).collect::<Vec<_>>()))
    };
    let refused = request("18,130");
    let rid = pending(&s, "s", "verify");
    ok(ipv8(&s, "s", &["id", "deny", &rid.to_string()]));
    let out = refused.join().unwrap();
    assert_eq!(out.status.code(), Some(4));

    let accepted = request("18,130");
    let rid = pending(&s, "s", "verify");
    ok(ipv8(&s, "s", &["id", "allow", &rid.to_string()]));
    let outcome = ok(accepted.join().unwrap());
    assert_eq!(outcome["outcome"]["accepted"], true);

    vd.stop(&v, "v");
    ad.stop(&a, "a");
    sd.stop(&s, "s");

    // The attestation was written to the subject's chain file.
    let status = ok(ipv8(&s, "s", &["id", "status"]));
    assert_eq!(status["pseudonyms"][0]["attributes"][0]["attesters"][0], attester_ps.as_str());

    let log = v.join("audit.log");
    let verified = ok(ipv8(&v, "v", &["audit", "verify", log.to_str().unwrap()]));
    assert_eq!(verified["records"], 1);
    let mut bytes = std::fs::read(&log).unwrap();
    bytes[20] ^= 0x01;
    std::fs::write(&log, bytes).unwrap();
    assert_eq!(ipv8(&v, "v", &["audit", "verify", log.to_str().unwrap()]).status.code(), Some(3));
}
