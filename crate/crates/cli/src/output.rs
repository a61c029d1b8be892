use std::io::Write;

use serde_json::Value;

use crate::error::CliError;

/// Human text, or one JSON object per line with `--json`.
#[derive(Debug, Clone, Copy)]
pub struct Out {
    pub json: bool,
}

impl Out {
    pub fn emit(&self, value: Value, human: impl FnOnce(&Value) -> String) {
        let line = if self.json { value.to_string() } else { human(&value) };
        let mut stdout = std::io::stdout().lock();
        let _ = writeln!(stdout, "{line}");
        let _ = stdout.flush();
    }

    pub fn error(&self, e: &CliError) {
        if self.json {
            let v = serde_json::json!({"error": e.class(), "message": e.message(), "code": e.code()});
            println!("{v}");
        } else {
            eprintln!("error: {e}");
        }
    }
}
