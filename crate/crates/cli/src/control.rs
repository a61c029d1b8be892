//! Line-delimited JSON over a Unix socket in the data directory.
//! Requests carry an `op`; replies carry `ok` and either fields or an error.

use std::io::{BufRead, BufReader, Write};
use std::os::unix::net::UnixStream;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde_json::{json, Value};

use crate::error::CliError;

pub fn socket_path(dir: &Path) -> PathBuf {
    dir.join("control.sock")
}

pub fn ok(mut v: Value) -> Value {
    if let Value::Object(m) = &mut v {
        m.insert("ok".into(), Value::Bool(true));
    }
    v
}

pub fn err(e: &CliError) -> Value {
    json!({"ok": false, "class": e.class(), "message": e.message()})
}

/// Sends one request to the running node. Unreachable when no node listens.
pub fn call(dir: &Path, request: Value) -> Result<Value, CliError> {
    let path = socket_path(dir);
    let stream = UnixStream::connect(&path)
        .map_err(|e| CliError::Unreachable(format!("{}: {e}; is `node run` up?", path.display())))?;
    // Covert requests wait for a rendezvous, which can take a while.
    stream.set_read_timeout(Some(Duration::from_secs(180)))?;
    let mut w = stream.try_clone()?;
    writeln!(w, "{request}")?;
    let mut line = String::new();
    BufReader::new(stream).read_line(&mut line)?;
    let mut v: Value = serde_json::from_str(&line).map_err(|e| CliError::Io(format!("bad reply: {e}")))?;
    if v.get("ok") == Some(&Value::Bool(true)) {
        if let Value::Object(m) = &mut v {
            m.remove("ok");
        }
        return Ok(v);
    }
    let class = v.get("class").and_then(Value::as_str).unwrap_or("protocol");
    let message = v.get("message").and_then(Value::as_str).unwrap_or("no message").to_string();
    Err(CliError::from_class(class, message))
}

/// Like [`call`], but `None` when there is no node to talk to.
pub fn try_call(dir: &Path, request: Value) -> Option<Result<Value, CliError>> {
    if !socket_path(dir).exists() {
        return None;
    }
    match call(dir, request) {
        Err(CliError::Unreachable(_)) => None,
        r => Some(r),
    }
}
