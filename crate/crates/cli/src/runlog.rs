use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

/// Appends one JSON event per line to `<work_dir>/run_log.jsonl`.
/// Only the `elapsed_ms` field depends on wall-clock time.
pub struct RunLog {
    path: PathBuf,
    command: String,
    started: Instant,
}

impl RunLog {
    pub fn new(work_dir: &Path, command: &str) -> Self {
        Self {
            path: work_dir.join("run_log.jsonl"),
            command: command.to_string(),
            started: Instant::now(),
        }
    }

    pub fn event(&self, event: &str, fields: Value) {
        let mut obj = json!({"command": self.command, "event": event});
        if let (Some(o), Value::Object(extra)) = (obj.as_object_mut(), fields) {
            o.extend(extra);
        }
        obj["elapsed_ms"] = json!(self.started.elapsed().as_millis() as u64);
        let write = || -> std::io::Result<()> {
            if let Some(d) = self.path.parent() {
                std::fs::create_dir_all(d)?;
            }
            let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
            writeln!(f, "{obj}")
        };
        if let Err(e) = write() {
            log::warn!("run log {}: {e}", self.path.display());
        }
    }
}
