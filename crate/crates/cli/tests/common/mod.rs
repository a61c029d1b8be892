#![allow(dead_code)]

use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

pub const RANGE: &str = "ZKRP Peng-Bao";

pub fn ipv8(dir: &Path, seed: &str, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipv8"))
        .arg("--dir")
        .arg(dir)
        .arg("--json")
        .args(args)
        .env("IPV8_SEED", seed)
        .output()
        .expect("binary runs")
}

/// Last stdout line as JSON; panics with stderr on a non-zero exit.
pub fn ok(out: Output) -> Value {
    assert!(out.status.success(), "exit {:?}\nstdout: {}\nstderr: {}", out.status.code(), String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    last_json(&out)
}

pub fn last_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.lines().last().expect("some output")).expect("json line")
}

/// A background `node run`, stopped over its control socket or killed on drop.
pub struct Daemon {
    pub child: Child,
    pub key: String,
    pub address: String,
}

impl Daemon {
    pub fn start(dir: &Path, seed: &str, extra: &[&str]) -> Daemon {
        let _ = std::fs::remove_file(dir.join("node.json"));
        let child = Command::new(env!("CARGO_BIN_EXE_ipv8"))
            .arg("--dir")
            .arg(dir)
            .arg("--json")
            .args(["node", "run", "--bind", "127.0.0.1:0", "--duration", "60"])
            .args(extra)
            .env("IPV8_SEED", seed)
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .expect("daemon starts");
        let info = dir.join("node.json");
        let until = Instant::now() + Duration::from_secs(10);
        while !(info.exists() && dir.join("control.sock").exists()) {
            assert!(Instant::now() < until, "node did not come up");
            std::thread::sleep(Duration::from_millis(20));
        }
        let v: Value = serde_json::from_str(&std::fs::read_to_string(info).unwrap()).unwrap();
        Daemon { child, key: v["key"].as_str().unwrap().into(), address: v["address"].as_str().unwrap().into() }
    }

    pub fn stop(mut self, dir: &Path, seed: &str) {
        ok(ipv8(dir, seed, &["id", "status"]));
        let _ = std::os::unix::net::UnixStream::connect(dir.join("control.sock")).and_then(|mut s| {
            use std::io::Write;
            writeln!(s, "{{\"op\":\"shutdown\"}}")
        });
        let until = Instant::now() + Duration::from_secs(5);
        while Instant::now() < until {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            std::thread::sleep(Duration::from_millis(20));
        }
        let _ = self.child.kill();
    }
}

impl Drop for Daemon {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Polls `id status` until a request of `kind` is pending; returns its id.
pub fn pending(dir: &Path, seed: &str, kind: &str) -> u64 {
    let until = Instant::now() + Duration::from_secs(10);
    loop {
        let v = ok(ipv8(dir, seed, &["id", "status"]));
        if let Some(r) = v["outstanding"].as_array().into_iter().flatten().find(|r| r["kind"] == kind) {
            return r["request_id"].as_u64().unwrap();
        }
        assert!(Instant::now() < until, "no pending {kind} request");
        std::thread::sleep(Duration::from_millis(30));
    }
}
